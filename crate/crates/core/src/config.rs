//! Experiment configuration files, environment overrides and run manifests.
//!
//! A config is one JSON document. Any field can be overridden from the
//! environment with `NEUROVASC__<a>__<b>=<value>`, which sets the dot-path
//! `a.b`; the value is parsed as JSON and taken as a string if that fails.
//! `NEUROVASC_SEED` sets both the phantom and the training seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::data::manifest::DEFAULT_SPLIT;
use crate::data::phantom::hex;
use crate::data::PhantomSpec;
use crate::error::IoContext;
use crate::network::ModelConfig;
use crate::train::TrainConfig;
use crate::{Error, Result};

pub const ENV_PREFIX: &str = "NEUROVASC__";
pub const SEED_VAR: &str = "NEUROVASC_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Generator used when no manifest is given.
    pub phantom: PhantomSpec,
    /// Number of phantoms generated when no manifest is given.
    pub count: usize,
    /// Train:val:test proportions for generated phantoms.
    pub split: [f64; 3],
    /// Existing dataset manifest; takes the place of generated phantoms.
    pub manifest: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            phantom: PhantomSpec::default(),
            count: 12,
            split: DEFAULT_SPLIT,
            manifest: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.manifest.is_none() {
            self.phantom.validate()?;
            if self.count == 0 {
                return Err(Error::InvalidConfig("count must be ≥ 1 when phantoms are generated".into()));
            }
        }
        self.model.validate()?;
        self.train.validate(self.model.num_classes)
    }

    /// Reads a config file and applies overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).at(path)?;
        let format = |reason: String| Error::Format { path: path.to_path_buf(), reason };
        let value: Value = serde_json::from_slice(&bytes).map_err(|e| format(e.to_string()))?;
        Self::from_json(value).map_err(|e| format(e.to_string()))?.with_env(std::env::vars())
    }

    /// Parses a possibly sparse document. Model fields left out are derived
    /// from the given `channels` and `input_shape`, so a model can be
    /// described by its widths alone.
    pub fn from_json(mut value: Value) -> Result<Self> {
        if let Some(model) = value.get_mut("model") {
            let base: ModelConfig = serde_json::from_value(model.clone())?;
            let mut full = serde_json::to_value(ModelConfig::with_shape(base.channels, base.input_shape))?;
            merge(&mut full, model.take());
            *model = full;
        }
        Ok(serde_json::from_value(value)?)
    }

    /// Applies `NEUROVASC__a__b` overrides and then `NEUROVASC_SEED`.
    pub fn with_env(self, vars: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut overrides: Vec<(String, String)> = Vec::new();
        let mut seed = None;
        for (k, v) in vars {
            if k == SEED_VAR {
                seed = Some(v.trim().parse::<u64>().map_err(|_| Error::InvalidConfig(format!("{SEED_VAR}={v:?} is not a seed")))?);
            } else if let Some(path) = k.strip_prefix(ENV_PREFIX) {
                overrides.push((path.split("__").collect::<Vec<_>>().join("."), v));
            }
        }
        // sorted so the result does not depend on environment order
        overrides.sort();
        let mut cfg = self;
        if !overrides.is_empty() {
            let mut tree = serde_json::to_value(&cfg)?;
            for (path, raw) in &overrides {
                set_path(&mut tree, path, parse_value(raw))?;
            }
            cfg = serde_json::from_value(tree).map_err(|e| Error::InvalidConfig(format!("environment override: {e}")))?;
        }
        if let Some(s) = seed {
            cfg = cfg.with_seed(s);
        }
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.phantom.seed = seed;
        self.train.seed = seed;
        self
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

/// Recursively overlays `over` onto `base`; non-object values replace.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
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

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Replaces the value at a dot-path; every segment must already exist.
pub fn set_path(tree: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut node = tree;
    for seg in path.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(seg),
            Value::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| Error::InvalidConfig(format!("unknown configuration path {path:?}")))?;
    }
    *node = value;
    Ok(())
}

/// Provenance written next to every run's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// `git describe` of the working tree, or the crate version outside a checkout.
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String, seed: u64) -> Self {
        Self { command: command.into(), version: source_version(), config_hash, seed }
    }
}

pub fn source_version() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = ExperimentConfig::default()
            .with_env(env(&[("NEUROVASC__train__learning_rate", "0.001"), ("NEUROVASC__output_dir", "out/x"), ("OTHER", "1")]))
            .unwrap();
        assert_eq!(cfg.train.learning_rate, 1e-3);
        assert_eq!(cfg.output_dir, PathBuf::from("out/x"));
    }

    #[test]
    fn unknown_path_is_rejected() {
        let err = ExperimentConfig::default().with_env(env(&[("NEUROVASC__train__lr", "1")])).unwrap_err();
        assert!(err.to_string().contains("train.lr"), "{err}");
    }

    #[test]
    fn seed_variable_sets_both_seeds() {
        let cfg = ExperimentConfig::default().with_env(env(&[("NEUROVASC_SEED", "41")])).unwrap();
        assert_eq!((cfg.phantom.seed, cfg.train.seed), (41, 41));
        assert!(ExperimentConfig::default().with_env(env(&[("NEUROVASC_SEED", "x")])).is_err());
    }

    #[test]
    fn sparse_model_is_completed_from_its_widths() {
        let doc = serde_json::json!({"model": {"channels": [8, 16, 32, 64, 128], "input_shape": [64, 64, 32], "cda2f": {"heads": 2}}});
        let cfg = ExperimentConfig::from_json(doc).unwrap();
        assert_eq!(cfg.model.msc2f.channels, 128);
        assert_eq!(cfg.model.cda2f.channels, 64);
        assert_eq!(cfg.model.cda2f.heads, 2);
        cfg.model.validate().unwrap();
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        assert_eq!(a.hash(), ExperimentConfig::default().hash());
        assert_ne!(a.hash(), a.clone().with_seed(1).hash());
    }
}
