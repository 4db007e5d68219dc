//! Tar checkpoints: version tag, configs, history and path-keyed tensors.
//!
//! Archive layout:
//!
//! ```text
//! VERSION                  format tag
//! model_config.json        ModelConfig
//! model_config.sha256      hash of the exact model_config.json bytes
//! train_config.json        optional TrainConfig
//! history.json             TrainingHistory
//! tensors.json             [{path, kind, shape, file}]
//! tensors/<path>.f32       little-endian values
//! optimizer.json           optional {step}
//! optimizer/{m,v}/<path>.f64
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::Path;

use neurovasc_autograd::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::phantom::hex;
use crate::error::IoContext;
use crate::network::{Model, ModelConfig, Network};
use crate::optim::Adam;
use crate::params::{Kind, ParamStore};
use crate::train::{TrainConfig, TrainingHistory};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: &str = "neurovasc-checkpoint/1";

/// SHA-256 of the canonical JSON encoding of a model configuration.
pub fn config_hash(cfg: &ModelConfig) -> String {
    hex(&Sha256::digest(serde_json::to_vec(cfg).expect("config serializes")))
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: Option<TrainConfig>,
    pub history: TrainingHistory,
    pub params: ParamStore<f32>,
    pub optimizer: Option<Adam>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    path: String,
    kind: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct OptimizerEntry {
    step: u64,
}

fn add(builder: &mut tar::Builder<BufWriter<File>>, name: &str, bytes: &[u8], path: &Path) -> Result<()> {
    let mut header = tar::Header::new_gnu();
    header.set_size(bytes.len() as u64);
    header.set_mode(0o644);
    header.set_mtime(0);
    header.set_cksum();
    builder.append_data(&mut header, name, bytes).at(path)
}

fn le_f32(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn le_f64(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

impl Checkpoint {
    pub fn from_model(model: &Model<f32>) -> Self {
        Self {
            model_config: model.config().clone(),
            train_config: None,
            history: TrainingHistory::default(),
            params: model.params.clone(),
            optimizer: None,
        }
    }

    pub fn model(&self) -> Result<Model<f32>> {
        Ok(Model { net: Network::new(self.model_config.clone())?, params: self.params.clone() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).at(dir)?;
        }
        let file = File::create(path).at(path)?;
        let mut b = tar::Builder::new(BufWriter::new(file));
        let cfg = serde_json::to_vec_pretty(&self.model_config)?;
        add(&mut b, "VERSION", CHECKPOINT_VERSION.as_bytes(), path)?;
        add(&mut b, "model_config.json", &cfg, path)?;
        add(&mut b, "model_config.sha256", config_hash(&self.model_config).as_bytes(), path)?;
        if let Some(t) = &self.train_config {
            add(&mut b, "train_config.json", &serde_json::to_vec_pretty(t)?, path)?;
        }
        add(&mut b, "history.json", &serde_json::to_vec_pretty(&self.history)?, path)?;
        let mut index = Vec::new();
        for (p, e) in self.params.iter() {
            let file = format!("tensors/{p}.f32");
            add(&mut b, &file, &le_f32(e.value.data()), path)?;
            let kind = match e.kind {
                Kind::Learnable => "learnable",
                Kind::Buffer => "buffer",
            };
            index.push(TensorEntry { path: p.to_string(), kind: kind.into(), shape: e.value.shape().to_vec(), file });
        }
        add(&mut b, "tensors.json", &serde_json::to_vec_pretty(&index)?, path)?;
        if let Some(a) = &self.optimizer {
            add(&mut b, "optimizer.json", &serde_json::to_vec(&OptimizerEntry { step: a.step })?, path)?;
            for (k, m) in &a.m {
                add(&mut b, &format!("optimizer/m/{k}.f64"), &le_f64(m), path)?;
            }
            for (k, v) in &a.v {
                add(&mut b, &format!("optimizer/v/{k}.f64"), &le_f64(v), path)?;
            }
        }
        b.into_inner().and_then(|mut w| std::io::Write::flush(&mut w)).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let corrupt = |m: String| Error::Checkpoint(format!("{}: {m}", path.display()));
        let file = File::open(path).at(path)?;
        let mut archive = tar::Archive::new(BufReader::new(file));
        let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
        for entry in archive.entries().map_err(|e| corrupt(e.to_string()))? {
            let mut entry = entry.map_err(|e| corrupt(e.to_string()))?;
            let name = entry.path().map_err(|e| corrupt(e.to_string()))?.to_string_lossy().into_owned();
            let mut bytes = Vec::new();
            entry.read_to_end(&mut bytes).map_err(|e| corrupt(e.to_string()))?;
            files.insert(name, bytes);
        }
        let get = |name: &str| files.get(name).ok_or_else(|| corrupt(format!("missing {name}")));
        let version = String::from_utf8_lossy(get("VERSION")?).into_owned();
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(format!("version {version:?}, expected {CHECKPOINT_VERSION:?}")));
        }
        let json = |name: &str| -> Result<serde_json::Value> {
            serde_json::from_slice(get(name)?).map_err(|e| corrupt(format!("{name}: {e}")))
        };
        let model_config: ModelConfig = serde_json::from_value(json("model_config.json")?).map_err(|e| corrupt(e.to_string()))?;
        let stored_hash = String::from_utf8_lossy(get("model_config.sha256")?).into_owned();
        if stored_hash != config_hash(&model_config) {
            return Err(corrupt("model configuration hash mismatch".into()));
        }
        let train_config = match files.contains_key("train_config.json") {
            true => Some(serde_json::from_value(json("train_config.json")?).map_err(|e| corrupt(e.to_string()))?),
            false => None,
        };
        let history: TrainingHistory = serde_json::from_value(json("history.json")?).map_err(|e| corrupt(e.to_string()))?;
        let index: Vec<TensorEntry> = serde_json::from_value(json("tensors.json")?).map_err(|e| corrupt(e.to_string()))?;
        let mut params = ParamStore::new();
        for t in index {
            let bytes = get(&t.file)?;
            let n: usize = t.shape.iter().product();
            if bytes.len() != 4 * n {
                return Err(corrupt(format!("{} holds {} bytes for shape {:?}", t.file, bytes.len(), t.shape)));
            }
            let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            let kind = match t.kind.as_str() {
                "learnable" => Kind::Learnable,
                "buffer" => Kind::Buffer,
                other => return Err(corrupt(format!("unknown tensor kind {other:?}"))),
            };
            params.insert(t.path, Tensor::from_vec(t.shape, data), kind);
        }
        let net = Network::new(model_config.clone())?;
        let fresh: ParamStore<f32> = net.init(0);
        for (p, e) in fresh.iter() {
            match params.get(p) {
                Some(v) if v.shape() == e.value.shape() && params.kind(p) == Some(e.kind) => {}
                Some(_) => return Err(corrupt(format!("tensor {p} does not match the configured network"))),
                None => return Err(corrupt(format!("tensor {p} missing"))),
            }
        }
        if params.len() != fresh.len() {
            return Err(corrupt(format!("{} tensors stored, the network has {}", params.len(), fresh.len())));
        }
        let optimizer = match files.get("optimizer.json") {
            None => None,
            Some(bytes) => {
                let o: OptimizerEntry = serde_json::from_slice(bytes).map_err(|e| corrupt(e.to_string()))?;
                let lr = train_config.as_ref().map(|t: &TrainConfig| t.learning_rate).unwrap_or(8e-5);
                let mut a = Adam::new(crate::optim::AdamConfig { lr, ..Default::default() });
                a.step = o.step;
                for (name, bytes) in &files {
                    let f64s = || bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
                    if let Some(k) = name.strip_prefix("optimizer/m/").and_then(|k| k.strip_suffix(".f64")) {
                        a.m.insert(k.to_string(), f64s());
                    } else if let Some(k) = name.strip_prefix("optimizer/v/").and_then(|k| k.strip_suffix(".f64")) {
                        a.v.insert(k.to_string(), f64s());
                    }
                }
                Some(a)
            }
        };
        Ok(Self { model_config, train_config, history, params, optimizer })
    }

    /// Loads and checks that the stored model matches `expected`.
    pub fn load_for(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        let (want, got) = (config_hash(expected), config_hash(&ck.model_config));
        if want != got {
            return Err(Error::Checkpoint(format!(
                "{}: model configuration hash {got} does not match the requested {want}",
                path.display()
            )));
        }
        Ok(ck)
    }
}
