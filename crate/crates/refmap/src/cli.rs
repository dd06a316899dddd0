//! Argument definitions and the flag layer of the configuration.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "refmap",
    version,
    about = "Illumination estimation from reflectance maps of several objects"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a scene manifest: object images, reflectance maps, BRDF tables.
    Render(RenderArgs),
    /// Dump the forward trajectory of noisy reflectance maps for a scene.
    Diffuse(DiffuseArgs),
    /// Sample illumination from observed objects and score it when truth is known.
    Invert(InvertArgs),
    /// Score predicted environment maps against a reference.
    Eval(EvalArgs),
    /// SH band power of environment maps.
    Spectrum(SpectrumArgs),
    /// 2D PCA projection of one or more sample sets.
    Pca(PcaArgs),
    /// Generate scene manifests under the dataset sampling rules.
    GenDataset(GenDatasetArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Render(_) => "render",
            Command::Diffuse(_) => "diffuse",
            Command::Invert(_) => "invert",
            Command::Eval(_) => "eval",
            Command::Spectrum(_) => "spectrum",
            Command::Pca(_) => "pca",
            Command::GenDataset(_) => "gen-dataset",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Render(a) => &a.common,
            Command::Diffuse(a) => &a.common,
            Command::Invert(a) => &a.common,
            Command::Eval(a) => &a.common,
            Command::Spectrum(a) => &a.common,
            Command::Pca(a) => &a.common,
            Command::GenDataset(a) => &a.common,
        }
    }
}

/// Flags shared by every subcommand. They override the config file, which
/// overrides the built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON config; keys not given keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Print the effective config as JSON and exit.
    #[arg(long)]
    pub print_config: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of illumination samples.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Reflectance map resolution.
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Environment height used for rendering and scoring (width is twice this).
    #[arg(long)]
    pub env_height: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Observation noise std.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Chain jitter scale.
    #[arg(long)]
    pub delta: Option<f64>,
    /// SH degree of the sampled illumination.
    #[arg(long)]
    pub degree: Option<usize>,
    /// SH degree for spectra and distributional scores.
    #[arg(long)]
    pub metric_degree: Option<usize>,
}

impl Common {
    fn overlay(&self) -> Value {
        let mut sampler = Map::new();
        let mut pipeline = Map::new();
        let put = |map: &mut Map<String, Value>, key: &str, v: Option<Value>| {
            if let Some(v) = v {
                map.insert(key.to_string(), v);
            }
        };
        put(&mut sampler, "seed", self.seed.map(|v| json!(v)));
        put(&mut sampler, "n_samples", self.samples.map(|v| json!(v)));
        put(&mut sampler, "K_max", self.k_max.map(|v| json!(v)));
        put(&mut sampler, "sigma", self.sigma.map(|v| json!(v)));
        put(&mut sampler, "delta", self.delta.map(|v| json!(v)));
        put(&mut sampler, "degree", self.degree.map(|v| json!(v)));
        put(
            &mut pipeline,
            "lift_resolution",
            self.resolution.map(|v| json!(v)),
        );
        put(
            &mut pipeline,
            "render_env_height",
            self.env_height.map(|v| json!(v)),
        );
        put(
            &mut pipeline,
            "eval_height",
            self.env_height.map(|v| json!(v)),
        );
        put(
            &mut pipeline,
            "metric_degree",
            self.metric_degree.map(|v| json!(v)),
        );
        if !sampler.is_empty() {
            pipeline.insert("sampler".into(), Value::Object(sampler));
        }
        json!({ "pipeline": pipeline })
    }

    /// Defaults, then the config file, then flags; validated.
    pub fn resolve(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        let mut value = serde_json::to_value(&base).expect("config serializes");
        crate::config::merge(&mut value, self.overlay());
        let config: RunConfig = serde_json::from_value(value)
            .map_err(|e| CliError::Config(format!("bad flag value: {e}")))?;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct DiffuseArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    /// Scene manifest; observations are rendered from it and it supplies the truth.
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    pub manifest: Option<PathBuf>,
    /// Directory written by `render` (object_<m>.pfm and normals_<m>.pfm).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Reference environment map; overrides the manifest's.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// `all`, `single:<i>` or a comma-separated list of object indices.
    #[arg(long, default_value = "all")]
    pub objects: String,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub pred: Vec<PathBuf>,
    #[arg(long)]
    pub gt: PathBuf,
    /// Directory for scores.csv (and gaussian.csv with two or more predictions).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    /// Environment maps (PFM or HDR) or SH tables (CSV).
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    /// Sample directory written by `invert`; repeat for several distributions.
    #[arg(long = "samples-dir", required = true)]
    pub dirs: Vec<PathBuf>,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: usize,
    /// Environment maps (PFM or HDR); built-in skies when absent.
    #[arg(long)]
    pub envs: Option<PathBuf>,
    /// Normal maps (PFM); a built-in sphere when absent.
    #[arg(long)]
    pub normals: Option<PathBuf>,
    /// Texture images; uniform colors only when absent.
    #[arg(long)]
    pub textures: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

/// Which observed objects take part in an inversion.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ObjectSelection {
    All,
    List(Vec<usize>),
}

impl ObjectSelection {
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || {
            CliError::Config(format!(
                "bad --objects {s:?}; expected all, single:<i> or i,j,..."
            ))
        };
        if s == "all" {
            return Ok(Self::All);
        }
        if let Some(i) = s.strip_prefix("single:") {
            return Ok(Self::List(vec![i.parse().map_err(|_| bad())?]));
        }
        let list = s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        if list.is_empty() {
            return Err(bad());
        }
        Ok(Self::List(list))
    }

    pub fn indices(&self, available: usize) -> Result<Vec<usize>> {
        match self {
            Self::All => Ok((0..available).collect()),
            Self::List(list) => {
                for &i in list {
                    if i >= available {
                        return Err(CliError::Config(format!(
                            "object {i} requested, scene has {available}"
                        )));
                    }
                }
                Ok(list.clone())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_defaults() {
        let common = Common {
            seed: Some(7),
            resolution: Some(32),
            env_height: Some(16),
            ..Default::default()
        };
        let c = common.resolve().unwrap();
        assert_eq!(c.pipeline.sampler.seed, 7);
        assert_eq!(c.pipeline.lift_resolution, 32);
        assert_eq!(c.pipeline.eval_height, 16);
        assert_eq!(c.pipeline.sampler.k_max, 150);
    }

    #[test]
    fn flag_validation_is_a_config_error() {
        let common = Common {
            sigma: Some(-1.0),
            ..Default::default()
        };
        assert_eq!(common.resolve().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn object_selection() {
        assert_eq!(ObjectSelection::parse("all").unwrap(), ObjectSelection::All);
        assert_eq!(
            ObjectSelection::parse("single:2").unwrap(),
            ObjectSelection::List(vec![2])
        );
        assert_eq!(
            ObjectSelection::parse("0,2").unwrap().indices(3).unwrap(),
            vec![0, 2]
        );
        assert!(ObjectSelection::parse("single:x").is_err());
        assert!(ObjectSelection::parse("3").unwrap().indices(3).is_err());
    }
}
