//! Subcommand bodies. Each writes into its output directory and finishes
//! with `run.json`, the effective config and its hash.

use std::path::{Path, PathBuf};

use log::info;
use refmap_core::brdf::{tabulate_merl_style, DiffuseAlbedo, ReflectanceParams};
use refmap_core::diffusion::forward_sample_with;
use refmap_core::metrics::{
    fit_pca, gaussian_score, psnr, scaled_ldr_pair, si_log_rmse, si_rmse, ssim, Direction,
    ScoreReport, BRDF_TABLE_DIMS, DEFAULT_RETAINED_RATIO,
};
use refmap_core::render::{lift_to_sphere, render_reflectance_map_with, Integrator, Material};
use refmap_core::rng::{CounterRng, Stream};
use refmap_core::scene::{
    draw_scene, mean_albedo, resample_env, run_pipeline_staged, GroundTruth, Observation, Stage,
    TextureSource,
};
use refmap_core::sh::{self, ShCoefficients};
use serde::Serialize;
use serde_json::json;

use crate::cli::{
    Command, DiffuseArgs, EvalArgs, GenDatasetArgs, InvertArgs, ObjectSelection, PcaArgs,
    RenderArgs, SpectrumArgs,
};
use crate::config::{Provenance, RunConfig};
use crate::error::{CliError, Context, Result};
use crate::exec::Parallel;
use crate::formats;
use crate::manifest::{load_scene, ObjectEntry, SceneManifest, TextureRef};
use crate::tables::{self, Table};

pub fn run(command: &Command) -> Result<()> {
    let config = command.common().resolve()?;
    if command.common().print_config {
        print!("{}", config.to_json());
        return Ok(());
    }
    let exec = Parallel::from_env()?;
    match command {
        Command::Render(a) => render(a, &config, &exec),
        Command::Diffuse(a) => diffuse(a, &config, &exec),
        Command::Invert(a) => invert(a, &config, &exec),
        Command::Eval(a) => eval(a, &config),
        Command::Spectrum(a) => spectrum(a, &config),
        Command::Pca(a) => pca(a, &config),
        Command::GenDataset(a) => gen_dataset(a, &config),
    }?;
    Ok(())
}

fn provenance(dir: &Path, command: &str, config: &RunConfig) -> Result<()> {
    formats::write_json(&dir.join("run.json"), &Provenance::new(command, config))
}

fn read_manifest(path: &Path, config: &RunConfig) -> Result<refmap_core::scene::Scene> {
    let manifest = SceneManifest::read(path)?;
    load_scene(path, &manifest, config.pipeline.render_env_height)
}

#[derive(Serialize)]
struct RenderedObject {
    psi: ReflectanceParams,
    texture: TextureSource,
    width: usize,
    height: usize,
}

fn render(args: &RenderArgs, config: &RunConfig, exec: &Parallel) -> Result<()> {
    let p = &config.pipeline;
    let scene = read_manifest(&args.manifest, config)?;
    let out = &args.out;
    let observations = scene.observe(exec, p.render_env_height)?;
    let integrator = Integrator::for_env(&scene.env);
    formats::write_pfm(&out.join("env.pfm"), scene.env.image())?;
    let mut listing = Vec::new();
    for (m, (object, obs)) in scene.objects.iter().zip(&observations).enumerate() {
        info!("render: object {m}");
        formats::write_pfm(&out.join(format!("object_{m}.pfm")), &obs.image)?;
        formats::write_normal_map(&out.join(format!("normals_{m}.pfm")), &object.normals)?;
        formats::write_pfm(&out.join(format!("texture_{m}.pfm")), &object.texture)?;
        let map = render_reflectance_map_with(
            exec,
            &integrator,
            &Material::Disney(object.psi),
            &DiffuseAlbedo::WHITE,
            &scene.env,
            p.lift_resolution,
        )?;
        formats::write_reflectance_map(
            &out.join(format!("map_{m}.pfm")),
            &out.join(format!("map_{m}_mask.png")),
            &map,
        )?;
        let raw = lift_to_sphere(&obs.image, &obs.normals, p.lift_resolution)?;
        formats::write_reflectance_map(
            &out.join(format!("raw_{m}.pfm")),
            &out.join(format!("raw_{m}_mask.png")),
            &raw,
        )?;
        let table =
            tabulate_merl_style(&object.psi, &mean_albedo(&object.texture), BRDF_TABLE_DIMS)?;
        formats::write_merl(
            &out.join(format!("brdf_{m}.bin")),
            &out.join(format!("brdf_{m}.json")),
            &table,
        )?;
        listing.push(RenderedObject {
            psi: object.psi,
            texture: object.texture_source,
            width: object.normals.width,
            height: object.normals.height,
        });
    }
    let psis: Vec<_> = scene.objects.iter().map(|o| o.psi).collect();
    tables::psi_table(&psis).write(&out.join("psi.csv"))?;
    formats::write_json(
        &out.join("observations.json"),
        &json!({ "seed": scene.seed, "env_height": scene.env.height(), "objects": listing }),
    )?;
    provenance(out, "render", config)
}

fn diffuse(args: &DiffuseArgs, config: &RunConfig, exec: &Parallel) -> Result<()> {
    let p = &config.pipeline;
    let scene = read_manifest(&args.manifest, config)?;
    let psis: Vec<_> = scene.objects.iter().map(|o| o.psi).collect();
    let trajectory = forward_sample_with(
        exec,
        &Integrator::for_env(&scene.env),
        &scene.env,
        &psis,
        p.sampler.k_max,
        p.sampler.sigma,
        p.sampler.seed,
        p.lift_resolution,
    )?;
    let out = &args.out;
    for (m, row) in trajectory.noisy.iter().enumerate() {
        for (k, map) in row.iter().enumerate() {
            formats::write_pfm(&out.join(format!("m{m}_k{k}.pfm")), &map.to_image())?;
        }
        if let Some(first) = row.first() {
            formats::write_mask_png(
                &out.join(format!("m{m}_mask.png")),
                first.resolution,
                first.resolution,
                &first.mask,
            )?;
        }
    }
    tables::schedule_table(&trajectory.schedule).write(&out.join("schedule.csv"))?;
    provenance(out, "diffuse", config)
}

/// Observations from a `render` output directory, in object order.
fn read_observations(dir: &Path) -> Result<Vec<Observation>> {
    let mut out = Vec::new();
    loop {
        let m = out.len();
        let image_path = dir.join(format!("object_{m}.pfm"));
        if !image_path.exists() {
            break;
        }
        let image = formats::read_pfm(&image_path)?;
        let normals = formats::read_normal_map(&dir.join(format!("normals_{m}.pfm")))?;
        if image.width != normals.width || image.height != normals.height {
            return Err(CliError::format(
                &image_path,
                "image and normal map sizes differ",
            ));
        }
        out.push(Observation { image, normals });
    }
    if out.is_empty() {
        return Err(CliError::io(
            dir.join("object_0.pfm"),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no observations found"),
        ));
    }
    Ok(out)
}

fn invert(args: &InvertArgs, config: &RunConfig, exec: &Parallel) -> Result<()> {
    let p = &config.pipeline;
    let selection = ObjectSelection::parse(&args.objects)?;
    let (observations, mut truth) = match (&args.manifest, &args.input) {
        (Some(manifest), _) => {
            let scene = read_manifest(manifest, config)?;
            let obs = scene.observe(exec, p.render_env_height)?;
            (obs, Some(scene.ground_truth()))
        }
        (None, Some(dir)) => (read_observations(dir)?, None),
        (None, None) => {
            return Err(CliError::Config(
                "invert needs --manifest or --input".into(),
            ))
        }
    };
    if let Some(gt) = &args.gt {
        let env = formats::read_env(gt)?;
        match &mut truth {
            Some(t) => t.env = env,
            None => {
                truth = Some(GroundTruth {
                    env,
                    psis: Vec::new(),
                    textures: Vec::new(),
                })
            }
        }
    }
    let chosen = selection.indices(observations.len())?;
    let observations: Vec<Observation> = chosen.iter().map(|&i| observations[i].clone()).collect();
    let truth = truth.map(|t| GroundTruth {
        psis: if t.psis.is_empty() {
            t.psis
        } else {
            chosen.iter().map(|&i| t.psis[i]).collect()
        },
        textures: if t.textures.is_empty() {
            t.textures
        } else {
            chosen.iter().map(|&i| t.textures[i].clone()).collect()
        },
        env: t.env,
    });

    let out = &args.out;
    let mut io_error = None;
    let flush = |stage: Stage<'_>| -> Result<()> {
        match stage {
            Stage::RawMaps(maps) => {
                for (map, &m) in maps.iter().zip(&chosen) {
                    formats::write_reflectance_map(
                        &out.join(format!("raw_{m}.pfm")),
                        &out.join(format!("raw_{m}_mask.png")),
                        map,
                    )?;
                }
            }
            Stage::Reflectance(psis) => tables::psi_table(psis).write(&out.join("psi.csv"))?,
        }
        Ok(())
    };
    let result = run_pipeline_staged(exec, &observations, truth.as_ref(), p, &mut |stage| {
        flush(stage).map_err(|e| {
            let message = e.to_string();
            io_error = Some(e);
            refmap_core::Error::InvalidArgument(message)
        })
    });
    let result = match (result, io_error) {
        (_, Some(e)) => return Err(e),
        (Err(e), None) => {
            provenance(out, "invert", config)?;
            return Err(CliError::from(e).context("invert (partial results kept)"));
        }
        (Ok(r), None) => r,
    };

    let samples_dir = out.join("samples");
    let mut ids = Vec::new();
    for (i, s) in result.sampling.samples.iter().enumerate() {
        let env = s.environment(p.eval_height)?;
        formats::write_pfm(&samples_dir.join(format!("sample_{i}.pfm")), env.image())?;
        tables::sh_table(&s.coeffs).write(&samples_dir.join(format!("sample_{i}_sh.csv")))?;
        ids.push(i.to_string());
    }
    tables::samples_table(&result.sampling).write(&out.join("samples.csv"))?;
    let best = &result.sampling.samples[result.best_sample];
    formats::write_pfm(
        &out.join("best.pfm"),
        best.environment(p.eval_height)?.image(),
    )?;

    let mut texture_status = Vec::new();
    for (texture, &m) in result.textures.iter().zip(&chosen) {
        match texture {
            Ok(t) => {
                formats::write_pfm(&out.join(format!("texture_{m}.pfm")), &t.texture)?;
                formats::write_mask_png(
                    &out.join(format!("texture_{m}_mask.png")),
                    t.texture.width,
                    t.texture.height,
                    &t.mask,
                )?;
                texture_status.push(json!({ "object": m, "status": "ok" }));
            }
            Err(e) => texture_status.push(json!({ "object": m, "status": "skipped", "reason": e })),
        }
    }
    formats::write_json(
        &out.join("result.json"),
        &json!({
            "objects": chosen,
            "best_sample": result.best_sample,
            "failed_chains": result.sampling.failed,
            "K": result.sampling.schedule.k,
            "textures": texture_status,
        }),
    )?;

    if let Some(scores) = &result.scores {
        tables::scores_table(
            &scores.si_log_rmse,
            &scores.si_rmse,
            &scores.psnr,
            &scores.ssim,
            &ids,
        )
        .write(&out.join("scores.csv"))?;
        if let Some(g) = &scores.gaussian {
            let retained = {
                let coeffs: Vec<ShCoefficients> = result
                    .sampling
                    .samples
                    .iter()
                    .map(|s| s.coeffs.with_degree(p.metric_degree))
                    .collect();
                fit_pca(&coeffs, DEFAULT_RETAINED_RATIO)?.retained
            };
            tables::gaussian_table(g, result.sampling.samples.len(), retained)
                .write(&out.join("gaussian.csv"))?;
        }
        if !scores.brdf_log_rmse.is_empty() {
            let mut t = Table::new(&["object", "brdf_log_rmse"]);
            for (v, m) in scores.brdf_log_rmse.iter().zip(&chosen) {
                t.row([m.to_string(), tables::num(*v)]);
            }
            t.write(&out.join("brdf.csv"))?;
        }
    }
    provenance(out, "invert", config)
}

fn eval(args: &EvalArgs, config: &RunConfig) -> Result<()> {
    let p = &config.pipeline;
    let reference = resample_env(&formats::read_env(&args.gt)?, p.eval_height)?;
    let mut logs = Vec::new();
    let mut rmses = Vec::new();
    let mut psnrs = Vec::new();
    let mut ssims = Vec::new();
    let mut coeffs = Vec::new();
    let mut ids = Vec::new();
    for (i, path) in args.pred.iter().enumerate() {
        let pred = formats::read_env(path)?;
        coeffs.push(sh::project(&pred, p.metric_degree));
        let pred = resample_env(&pred, p.eval_height)?;
        let ctx = || path.display().to_string();
        logs.push(
            si_log_rmse(pred.image(), reference.image(), None)
                .map_err(|e| CliError::from(e).context(ctx()))?,
        );
        rmses.push(si_rmse(pred.image(), reference.image(), None)?);
        let (a, b) = scaled_ldr_pair(pred.image(), reference.image())?;
        psnrs.push(psnr(&a, &b)?);
        ssims.push(ssim(&a, &b)?);
        ids.push(i.to_string());
    }
    let out = &args.out;
    tables::scores_table(
        &ScoreReport::new("si_log_rmse", Direction::LowerBetter, logs),
        &ScoreReport::new("si_rmse", Direction::LowerBetter, rmses),
        &ScoreReport::new("psnr", Direction::HigherBetter, psnrs),
        &ScoreReport::new("ssim", Direction::HigherBetter, ssims),
        &ids,
    )
    .write(&out.join("scores.csv"))?;
    if coeffs.len() >= 2 {
        let model = fit_pca(&coeffs, DEFAULT_RETAINED_RATIO)?;
        let gt = sh::project(&formats::read_env(&args.gt)?, p.metric_degree);
        let score = gaussian_score(&model, &gt)?;
        tables::gaussian_table(&score, coeffs.len(), model.retained)
            .write(&out.join("gaussian.csv"))?;
    }
    provenance(out, "eval", config)
}

fn read_coefficients(path: &Path, degree: usize) -> Result<ShCoefficients> {
    if formats::extension(path) == "csv" {
        tables::read_sh(path)
    } else {
        Ok(sh::project(&formats::read_env(path)?, degree))
    }
}

fn spectrum(args: &SpectrumArgs, config: &RunConfig) -> Result<()> {
    let mut t = Table::new(&["input", "l", "power"]);
    for path in &args.input {
        let coeffs = read_coefficients(path, config.pipeline.metric_degree)?;
        tables::spectrum_rows(
            &mut t,
            &path.display().to_string(),
            &sh::band_power(&coeffs),
        );
    }
    t.write(&args.out)
}

/// `sample_<i>_sh.csv` files of one directory, in index order.
fn sample_tables(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let dir = if dir.join("samples").is_dir() {
        dir.join("samples")
    } else {
        dir.to_path_buf()
    };
    let entries = std::fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(&dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(id) = name
            .strip_prefix("sample_")
            .and_then(|r| r.strip_suffix("_sh.csv"))
        {
            if let Ok(id) = id.parse::<usize>() {
                found.push((id, entry.path()));
            }
        }
    }
    found.sort();
    Ok(found)
}

fn pca(args: &PcaArgs, config: &RunConfig) -> Result<()> {
    let mut tagged = Vec::new();
    for (d, dir) in args.dirs.iter().enumerate() {
        for (id, path) in sample_tables(dir)? {
            tagged.push((d, id, tables::read_sh(&path)?));
        }
    }
    let degree = tagged
        .iter()
        .map(|t| t.2.degree)
        .max()
        .unwrap_or(0)
        .max(config.pipeline.sampler.degree);
    let coeffs: Vec<ShCoefficients> = tagged.iter().map(|t| t.2.with_degree(degree)).collect();
    let model = fit_pca(&coeffs, DEFAULT_RETAINED_RATIO)?;
    let mut t = Table::new(&["distribution", "sample_id", "pc1", "pc2"]);
    for ((d, id, _), c) in tagged.iter().zip(&coeffs) {
        let z = model.project(&c.flatten())?;
        let pc = |i: usize| z.get(i).copied().unwrap_or(0.0);
        t.row([
            d.to_string(),
            id.to_string(),
            tables::num(pc(0)),
            tables::num(pc(1)),
        ]);
    }
    t.write(&args.out)
}

/// Regular files with one of `extensions`, sorted by name.
fn list_assets(dir: &Path, extensions: &[&str]) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(CliError::Config(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_file() && extensions.contains(&formats::extension(&path).as_str()) {
            let abs = std::fs::canonicalize(&path).map_err(|e| CliError::io(&path, e))?;
            out.push(abs);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(CliError::Config(format!(
            "{} holds no {} files",
            dir.display(),
            extensions.join("/")
        )));
    }
    Ok(out)
}

pub const BUILTIN_SKIES: usize = 8;
pub const BUILTIN_NORMALS: &str = "builtin:sphere:64";

fn gen_dataset(args: &GenDatasetArgs, config: &RunConfig) -> Result<()> {
    let rules = &config.rules;
    let text = |p: &Path| p.display().to_string();
    let envs: Vec<String> = match &args.envs {
        Some(d) => list_assets(d, &["pfm", "hdr"])?
            .iter()
            .map(|p| text(p))
            .collect(),
        None => (0..BUILTIN_SKIES)
            .map(|i| format!("builtin:sky:{i}"))
            .collect(),
    };
    let normals: Vec<String> = match &args.normals {
        Some(d) => list_assets(d, &["pfm"])?.iter().map(|p| text(p)).collect(),
        None => vec![BUILTIN_NORMALS.to_string()],
    };
    let textures: Vec<String> = match &args.textures {
        Some(d) => list_assets(d, &["png", "pfm", "hdr"])?
            .iter()
            .map(|p| text(p))
            .collect(),
        None => Vec::new(),
    };
    // surfaces rule errors before anything is written
    draw_scene(0, envs.len(), normals.len(), textures.len(), rules)?;

    let seed = config.pipeline.sampler.seed;
    let root = CounterRng::new(seed, Stream::Scene);
    let mut scenes = Vec::with_capacity(args.count);
    for id in 0..args.count {
        let scene_seed = root.with(id as u64).bits(0);
        let draw = draw_scene(scene_seed, envs.len(), normals.len(), textures.len(), rules)?;
        let objects = draw
            .objects
            .iter()
            .map(|o| ObjectEntry {
                normal_map: normals[o.normal_asset].clone(),
                texture: match o.texture_source {
                    TextureSource::Uniform(c) => TextureRef::Color(c),
                    TextureSource::Asset(i) => TextureRef::Path(textures[i].clone()),
                },
                psi: o.psi,
            })
            .collect();
        let manifest = SceneManifest {
            seed: scene_seed,
            objects,
            envmap: envs[draw.env_asset].clone(),
            notes: format!("scene {id} of dataset seed {seed}"),
        };
        let rel = format!("scenes/{id:05}/manifest.json");
        formats::write_json(&args.out.join(&rel), &manifest).context(format!("scene {id}"))?;
        scenes.push(json!({ "id": id, "seed": scene_seed, "manifest": rel }));
    }
    formats::write_json(
        &args.out.join("dataset.json"),
        &json!({ "seed": seed, "count": args.count, "rules": rules, "scenes": scenes }),
    )?;
    provenance(&args.out, "gen-dataset", config)
}
