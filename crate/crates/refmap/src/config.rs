//! Effective run configuration: built-in defaults, overlaid by a JSON config
//! file, overlaid by command-line flags.

use std::path::Path;

use refmap_core::scene::{PipelineConfig, SamplingRules};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::formats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub rules: SamplingRules,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            rules: SamplingRules::default(),
        }
    }
}

pub(crate) fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Defaults overlaid with a partial JSON document.
    pub fn from_overlay(overlay: Value) -> Result<Self> {
        let mut value = serde_json::to_value(Self::default()).expect("defaults serialize");
        merge(&mut value, overlay);
        let config: RunConfig = serde_json::from_value(value)
            .map_err(|e| CliError::Config(format!("bad config: {e}")))?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let bytes = formats::read_bytes(path)?;
        let overlay: Value = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Config(format!("{}: not valid JSON: {e}", path.display())))?;
        Self::from_overlay(overlay).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.rules.validate()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct Provenance<'a> {
    pub command: &'a str,
    pub seed: u64,
    pub config_hash: String,
    pub config: &'a RunConfig,
}

impl<'a> Provenance<'a> {
    pub fn new(command: &'a str, config: &'a RunConfig) -> Self {
        Self {
            command,
            seed: config.pipeline.sampler.seed,
            config_hash: config.hash(),
            config,
        }
    }
}
