//! Multi-object scenes, synthetic scene sampling, and the end-to-end
//! texture / reflectance / illumination pipeline.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::brdf::{DiffuseAlbedo, ReflectanceParams};
use crate::diffusion::{
    estimate_reflectance_with, sample_illumination_with, EstimatorConfig, SamplerConfig, SamplingResult,
};
use crate::envmap::EnvironmentMap;
use crate::error::{ensure, Error, Result, ResultExt};
use crate::exec::Executor;
use crate::geometry::Rgb;
use crate::image::RgbImage;
use crate::metrics::{
    brdf_log_rmse, fit_pca, gaussian_score, psnr, scaled_ldr_pair, si_log_rmse, si_rmse, ssim, Direction,
    GaussianScore, ScoreReport, DEFAULT_RETAINED_RATIO, SSIM_WINDOW,
};
use crate::render::{lift_to_sphere, render_object_with, shade_object, Integrator, Material, NormalMap, ReflectanceMap};
use crate::rng::{CounterRng, Stream};
use crate::sh::{self, ShCoefficients};

/// Shading below this is treated as unlit when solving for texture.
pub const SHADING_FLOOR: f64 = 1e-4;

/// Where an object's texture came from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureSource {
    Uniform(Rgb),
    Asset(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub normals: NormalMap,
    /// Per-pixel diffuse albedo, same size as the normal map.
    pub texture: RgbImage,
    pub psi: ReflectanceParams,
    pub normal_asset: usize,
    pub texture_source: TextureSource,
}

/// Objects sharing one distant illumination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub seed: u64,
    pub objects: Vec<SceneObject>,
    pub env: EnvironmentMap,
    pub env_asset: usize,
}

/// Everything [`sample_scene`] draws from.
#[derive(Clone, Debug, Default)]
pub struct SceneAssets {
    pub envs: Vec<EnvironmentMap>,
    pub normals: Vec<NormalMap>,
    pub textures: Vec<RgbImage>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingRules {
    pub objects: usize,
    /// Chance that an object's roughness is drawn above `roughness_floor`.
    pub floor_probability: f64,
    pub roughness_floor: f64,
    /// Chance of an asset texture over a uniform random color, when assets exist.
    pub asset_texture_ratio: f64,
}

impl Default for SamplingRules {
    fn default() -> Self {
        Self {
            objects: 3,
            floor_probability: 0.5,
            roughness_floor: 0.4,
            asset_texture_ratio: 0.5,
        }
    }
}

impl SamplingRules {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.objects >= 1, Config, "a scene needs at least one object");
        for (name, p) in [
            ("floor_probability", self.floor_probability),
            ("roughness_floor", self.roughness_floor),
            ("asset_texture_ratio", self.asset_texture_ratio),
        ] {
            ensure!((0.0..=1.0).contains(&p), Config, "{} must lie in [0, 1], got {}", name, p);
        }
        Ok(())
    }
}

/// Reflectance draw: metallic in {0, 1}, roughness floored half the time.
pub fn sample_psi(rng: CounterRng, rules: &SamplingRules) -> ReflectanceParams {
    let metallic = if rng.uniform(0) < 0.5 { 0.0 } else { 1.0 };
    let roughness = if rng.uniform(1) < rules.floor_probability {
        rules.roughness_floor + (1.0 - rules.roughness_floor) * rng.uniform(2)
    } else {
        rng.uniform(2)
    };
    ReflectanceParams {
        metallic,
        roughness,
        specular: rng.uniform(3),
    }
}

fn pick(rng: CounterRng, counter: u64, n: usize) -> usize {
    ((rng.uniform(counter) * n as f64) as usize).min(n - 1)
}

/// Nearest-neighbour resample of `src` to `width x height`.
pub fn resample_nearest(src: &RgbImage, width: usize, height: usize) -> RgbImage {
    let mut data = Vec::with_capacity(width * height);
    for r in 0..height {
        let sr = (r * src.height / height).min(src.height - 1);
        for c in 0..width {
            let sc = (c * src.width / width).min(src.width - 1);
            data.push(src.get(sr, sc));
        }
    }
    RgbImage { width, height, data }
}

/// Index-level choices for one object; [`sample_scene`] turns them into data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectDraw {
    pub psi: ReflectanceParams,
    pub normal_asset: usize,
    pub texture_source: TextureSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneDraw {
    pub seed: u64,
    pub env_asset: usize,
    pub objects: Vec<ObjectDraw>,
}

/// All random choices for a scene, given only how many assets of each kind exist.
pub fn draw_scene(seed: u64, envs: usize, normals: usize, textures: usize, rules: &SamplingRules) -> Result<SceneDraw> {
    rules.validate()?;
    ensure!(envs > 0, Config, "no environment maps to sample from");
    ensure!(normals > 0, Config, "no normal maps to sample from");
    let root = CounterRng::new(seed, Stream::Scene);
    let env_asset = pick(root, 0, envs);
    let objects = (0..rules.objects)
        .map(|m| {
            let rng = root.with(m as u64 + 1);
            let psi = sample_psi(rng, rules);
            let normal_asset = pick(rng, 4, normals);
            let texture_source = if textures > 0 && rng.uniform(5) < rules.asset_texture_ratio {
                TextureSource::Asset(pick(rng, 6, textures))
            } else {
                TextureSource::Uniform(core::array::from_fn(|c| rng.uniform(7 + c as u64)))
            };
            ObjectDraw {
                psi,
                normal_asset,
                texture_source,
            }
        })
        .collect();
    Ok(SceneDraw {
        seed,
        env_asset,
        objects,
    })
}

pub fn sample_scene(seed: u64, assets: &SceneAssets, rules: &SamplingRules) -> Result<Scene> {
    for (i, t) in assets.textures.iter().enumerate() {
        ensure!(!t.data.is_empty(), Config, "texture asset {} is empty", i);
    }
    let draw = draw_scene(seed, assets.envs.len(), assets.normals.len(), assets.textures.len(), rules)?;
    let objects = draw
        .objects
        .iter()
        .map(|d| {
            let normals = assets.normals[d.normal_asset].clone();
            let texture = match d.texture_source {
                TextureSource::Asset(idx) => resample_nearest(&assets.textures[idx], normals.width, normals.height),
                TextureSource::Uniform(color) => RgbImage::filled(normals.width, normals.height, color),
            };
            SceneObject {
                normals,
                texture,
                psi: d.psi,
                normal_asset: d.normal_asset,
                texture_source: d.texture_source,
            }
        })
        .collect();
    Ok(Scene {
        seed,
        objects,
        env: assets.envs[draw.env_asset].clone(),
        env_asset: draw.env_asset,
    })
}

/// Per-pixel albedo recovered from one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureEstimate {
    pub texture: RgbImage,
    /// Foreground pixels with enough diffuse shading to solve for.
    pub mask: Vec<bool>,
}

/// Closed-form dielectric texture: strip the albedo-free specular radiance,
/// divide by white-albedo diffuse shading, clamp to [0, 1].
pub fn estimate_texture<E: Executor>(
    exec: &E,
    integrator: &Integrator,
    image: &RgbImage,
    normals: &NormalMap,
    env: &ShCoefficients,
    psi: &ReflectanceParams,
) -> Result<TextureEstimate> {
    ensure!(
        psi.metallic == 0.0,
        UnsupportedMaterial,
        "texture has no closed form for metallic = {}; the specular lobe is albedo-tinted",
        psi.metallic
    );
    ensure!(normals.foreground_count() > 0, InsufficientData, "object has no foreground pixels");
    ensure!(
        image.width == normals.width && image.height == normals.height,
        InvalidArgument,
        "image is {}x{} but the normal map is {}x{}",
        image.width,
        image.height,
        normals.width,
        normals.height
    );
    let lighting = sh::reconstruct(env, integrator.height)?.clamp_negative();
    let material = Material::Disney(*psi);
    let shading = shade_object(exec, integrator, normals, &material, &lighting)?;
    let mut data = vec![[0.0; 3]; image.data.len()];
    let mut mask = vec![false; image.data.len()];
    for (px, s) in shading.iter().enumerate() {
        let Some(s) = s else { continue };
        if s.diffuse.iter().any(|d| *d < SHADING_FLOOR) {
            continue;
        }
        let free = s.albedo_free(&material);
        data[px] = core::array::from_fn(|c| ((image.data[px][c] - free[c]) / s.diffuse[c]).clamp(0.0, 1.0));
        mask[px] = true;
    }
    Ok(TextureEstimate {
        texture: RgbImage::new(image.width, image.height, data)?,
        mask,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub sampler: SamplerConfig,
    pub estimator: EstimatorConfig,
    /// Object slots the sampler expects; fewer objects are cycled to fill them.
    pub channels: usize,
    /// Resolution of the raw maps lifted from the images.
    pub lift_resolution: usize,
    /// Environment height for rendering observations and re-solving textures.
    pub render_env_height: usize,
    /// Environment height at which illumination is scored.
    pub eval_height: usize,
    /// SH degree of the distributional score; samples are zero-padded up to it.
    pub metric_degree: usize,
    /// Skip reflectance estimation and sample under the true reflectances.
    pub oracle_reflectance: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            estimator: EstimatorConfig::default(),
            channels: 3,
            lift_resolution: 128,
            render_env_height: 128,
            eval_height: 128,
            metric_degree: 32,
            oracle_reflectance: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        ensure!(self.channels >= 1, Config, "channels must be >= 1");
        ensure!(self.render_env_height >= 2, Config, "render_env_height must be >= 2");
        ensure!(
            self.eval_height >= SSIM_WINDOW,
            Config,
            "eval_height must be >= {} for SSIM, got {}",
            SSIM_WINDOW,
            self.eval_height
        );
        ensure!(self.lift_resolution >= 2, Config, "lift_resolution must be >= 2");
        ensure!(
            self.metric_degree >= self.sampler.degree,
            Config,
            "metric_degree {} is below the sampler degree {}",
            self.metric_degree,
            self.sampler.degree
        );
        Ok(())
    }

    fn render_integrator(&self) -> Result<Integrator> {
        Integrator::new(self.render_env_height, Default::default())
    }
}

/// What the pipeline sees: one image per object plus its geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub image: RgbImage,
    pub normals: NormalMap,
}

/// Quantities to score against, when known.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub env: EnvironmentMap,
    /// One per object, or empty when unknown.
    pub psis: Vec<ReflectanceParams>,
    /// One per object, or empty; BRDF scores use their mean albedo.
    pub textures: Vec<RgbImage>,
}

impl Scene {
    /// Render every object under the scene illumination, resampled to `env_height`.
    pub fn observe<E: Executor>(&self, exec: &E, env_height: usize) -> Result<Vec<Observation>> {
        let env = resample_env(&self.env, env_height)?;
        let integrator = Integrator::for_env(&env);
        self.objects
            .iter()
            .enumerate()
            .map(|(m, o)| {
                let image = render_object_with(exec, &integrator, &o.normals, &o.texture, &Material::Disney(o.psi), &env)
                    .context(alloc::format!("object {m}"))?;
                Ok(Observation {
                    image,
                    normals: o.normals.clone(),
                })
            })
            .collect()
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            env: self.env.clone(),
            psis: self.objects.iter().map(|o| o.psi).collect(),
            textures: self.objects.iter().map(|o| o.texture.clone()).collect(),
        }
    }
}

/// Box-downsample when the heights divide, bilinear otherwise.
pub fn resample_env(env: &EnvironmentMap, height: usize) -> Result<EnvironmentMap> {
    ensure!(height >= 1, InvalidArgument, "environment height must be >= 1");
    if env.height() % height == 0 {
        return env.downsample(env.height() / height);
    }
    Ok(EnvironmentMap::from_fn(height, |d| env.lookup(d)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneScores {
    pub si_log_rmse: ScoreReport,
    pub si_rmse: ScoreReport,
    pub psnr: ScoreReport,
    pub ssim: ScoreReport,
    /// Truth under the PCA Gaussian of the samples; needs two or more samples.
    pub gaussian: Option<GaussianScore>,
    /// Per object, estimated against true reflectance with the true mean albedo.
    pub brdf_log_rmse: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineResult {
    pub seed: u64,
    pub raw_maps: Vec<ReflectanceMap>,
    pub psi_estimates: Vec<ReflectanceParams>,
    pub sampling: SamplingResult,
    /// Index into `sampling.samples` with the lowest NLL.
    pub best_sample: usize,
    /// Re-solved under the best sample; `Err` text for metals and degenerate objects.
    pub textures: Vec<core::result::Result<TextureEstimate, String>>,
    pub scores: Option<SceneScores>,
}

/// Repeat `items` cyclically until there are at least `channels` of them.
pub fn fill_channels<T: Clone>(items: &[T], channels: usize) -> Vec<T> {
    let n = items.len().max(channels);
    (0..n).map(|i| items[i % items.len()].clone()).collect()
}

/// Intermediate results, reported as soon as each stage finishes.
#[derive(Clone, Copy, Debug)]
pub enum Stage<'a> {
    RawMaps(&'a [ReflectanceMap]),
    Reflectance(&'a [ReflectanceParams]),
}

/// Lift, estimate reflectance, sample illumination, re-solve textures, score.
pub fn run_pipeline<E: Executor>(
    exec: &E,
    observations: &[Observation],
    truth: Option<&GroundTruth>,
    config: &PipelineConfig,
) -> Result<PipelineResult> {
    run_pipeline_staged(exec, observations, truth, config, &mut |_| Ok(()))
}

/// [`run_pipeline`] with a hook that sees each finished stage, so callers can
/// keep partial results when a later stage fails.
pub fn run_pipeline_staged<E: Executor>(
    exec: &E,
    observations: &[Observation],
    truth: Option<&GroundTruth>,
    config: &PipelineConfig,
    on_stage: &mut dyn FnMut(Stage<'_>) -> Result<()>,
) -> Result<PipelineResult> {
    config.validate()?;
    ensure!(!observations.is_empty(), InvalidArgument, "pipeline needs at least one object");
    if let Some(t) = truth {
        ensure!(
            t.psis.is_empty() || t.psis.len() == observations.len(),
            InvalidArgument,
            "{} true reflectances for {} objects",
            t.psis.len(),
            observations.len()
        );
    }
    let resolution = config.lift_resolution;
    let raw_maps = observations
        .iter()
        .enumerate()
        .map(|(m, o)| lift_to_sphere(&o.image, &o.normals, resolution).context(alloc::format!("object {m}")))
        .collect::<Result<Vec<_>>>()?;
    on_stage(Stage::RawMaps(&raw_maps))?;

    let psi_estimates = match (config.oracle_reflectance, truth) {
        (true, Some(t)) if !t.psis.is_empty() => t.psis.clone(),
        (true, _) => return Err(Error::Config("oracle_reflectance needs true reflectances".into())),
        (false, _) => raw_maps
            .iter()
            .enumerate()
            .map(|(m, map)| {
                estimate_reflectance_with(exec, map, None, &config.estimator).context(alloc::format!("object {m}"))
            })
            .collect::<Result<Vec<_>>>()?,
    };

    on_stage(Stage::Reflectance(&psi_estimates))?;

    let maps = fill_channels(&raw_maps, config.channels);
    let psis = fill_channels(&psi_estimates, config.channels);
    let sampling = sample_illumination_with(exec, &maps, &psis, &config.sampler)?;
    ensure!(!sampling.samples.is_empty(), InsufficientData, "every illumination chain diverged");
    let best_sample = sampling
        .samples
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.nll.total_cmp(&b.1.nll).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);

    let integrator = config.render_integrator()?;
    let best = &sampling.samples[best_sample].coeffs;
    let textures = observations
        .iter()
        .zip(&psi_estimates)
        .map(|(o, psi)| {
            estimate_texture(exec, &integrator, &o.image, &o.normals, best, psi).map_err(|e| alloc::format!("{e}"))
        })
        .collect();

    let scores = match truth {
        Some(t) => Some(score_scene(t, &psi_estimates, &sampling, config)?),
        None => None,
    };
    Ok(PipelineResult {
        seed: config.sampler.seed,
        raw_maps,
        psi_estimates,
        sampling,
        best_sample,
        textures,
        scores,
    })
}

/// Mean texture color, clamped to a valid albedo.
pub fn mean_albedo(texture: &RgbImage) -> DiffuseAlbedo {
    let n = texture.data.len().max(1) as f64;
    let mut acc = [0.0; 3];
    for p in &texture.data {
        for c in 0..3 {
            acc[c] += p[c];
        }
    }
    DiffuseAlbedo(acc.map(|v| (v / n).clamp(0.0, 1.0)))
}

/// Score samples against the truth; BRDF errors only when true reflectances are known.
pub fn score_scene(
    truth: &GroundTruth,
    psi_estimates: &[ReflectanceParams],
    sampling: &SamplingResult,
    config: &PipelineConfig,
) -> Result<SceneScores> {
    let reference = resample_env(&truth.env, config.eval_height)?;
    let mut logs = Vec::new();
    let mut rmses = Vec::new();
    let mut psnrs = Vec::new();
    let mut ssims = Vec::new();
    for s in &sampling.samples {
        let env = s.environment(config.eval_height)?;
        logs.push(si_log_rmse(env.image(), reference.image(), None)?);
        rmses.push(si_rmse(env.image(), reference.image(), None)?);
        let (a, b) = scaled_ldr_pair(env.image(), reference.image())?;
        psnrs.push(psnr(&a, &b)?);
        ssims.push(ssim(&a, &b)?);
    }
    let gaussian = if sampling.samples.len() >= 2 {
        let coeffs: Vec<ShCoefficients> =
            sampling.samples.iter().map(|s| s.coeffs.with_degree(config.metric_degree)).collect();
        let model = fit_pca(&coeffs, DEFAULT_RETAINED_RATIO)?;
        let gt = sh::project(&truth.env, config.metric_degree);
        Some(gaussian_score(&model, &gt)?)
    } else {
        None
    };
    let brdf = psi_estimates
        .iter()
        .zip(&truth.psis)
        .enumerate()
        .map(|(m, (est, gt))| {
            let rho = truth.textures.get(m).map(mean_albedo).unwrap_or(DiffuseAlbedo::WHITE);
            brdf_log_rmse(est, &rho, gt, &rho)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneScores {
        si_log_rmse: ScoreReport::new("si_log_rmse", Direction::LowerBetter, logs),
        si_rmse: ScoreReport::new("si_rmse", Direction::LowerBetter, rmses),
        psnr: ScoreReport::new("psnr", Direction::HigherBetter, psnrs),
        ssim: ScoreReport::new("ssim", Direction::HigherBetter, ssims),
        gaussian,
        brdf_log_rmse: brdf,
    })
}
