//! Portable sample container: one raw little-endian file per array and a
//! JSON sidecar describing them.
//!
//! For a sample stored as `dir/name.json` the arrays live next to it as
//! `name.image.f32` (IEEE-754 binary32, little-endian, W fastest) and
//! `name.labels.u8`. The sidecar records the shape, dtypes, SHA-256 of each
//! array file, the label codes and the sample metadata.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::phantom::hex;
use super::{SampleMeta, VolumeSample, LABEL_NAMES};
use crate::error::IoContext;
use crate::{Error, Result};

pub const FORMAT: &str = "neurovasc-volume";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayRef {
    pub file: String,
    pub dtype: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub version: u32,
    pub shape: [usize; 3],
    pub arrays: BTreeMap<String, ArrayRef>,
    pub label_codes: BTreeMap<String, String>,
    pub meta: SampleMeta,
}

fn sibling(json: &Path, suffix: &str) -> PathBuf {
    let stem = json.file_stem().and_then(|s| s.to_str()).unwrap_or("sample");
    json.with_file_name(format!("{stem}.{suffix}"))
}

/// Writes `path` (the sidecar) and its two array files.
pub fn save_volume(path: &Path, s: &VolumeSample) -> Result<()> {
    s.validate()?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).at(dir)?;
    }
    let image: Vec<u8> = s.image.iter().flat_map(|v| v.to_le_bytes()).collect();
    let mut arrays = BTreeMap::new();
    for (key, suffix, dtype, bytes) in [("image", "image.f32", "float32-le", &image), ("labels", "labels.u8", "uint8", &s.labels)] {
        let file = sibling(path, suffix);
        fs::write(&file, bytes).at(&file)?;
        let name = file.file_name().and_then(|n| n.to_str()).expect("utf-8 file name").to_string();
        arrays.insert(key.to_string(), ArrayRef { file: name, dtype: dtype.into(), sha256: hex(&Sha256::digest(bytes)) });
    }
    let sidecar = Sidecar {
        format: FORMAT.into(),
        version: VERSION,
        shape: s.shape,
        arrays,
        label_codes: LABEL_NAMES.iter().enumerate().map(|(i, n)| (i.to_string(), n.to_string())).collect(),
        meta: s.meta.clone(),
    };
    fs::write(path, serde_json::to_vec_pretty(&sidecar)?).at(path)
}

fn read_array(json: &Path, sidecar: &Sidecar, key: &str, dtype: &str, bytes_per: usize) -> Result<Vec<u8>> {
    let fail = |reason: String| Error::Format { path: json.to_path_buf(), reason };
    let a = sidecar.arrays.get(key).ok_or_else(|| fail(format!("missing {key} array")))?;
    if a.dtype != dtype {
        return Err(fail(format!("{key} array has dtype {}, expected {dtype}", a.dtype)));
    }
    let file = json.with_file_name(&a.file);
    let bytes = fs::read(&file).map_err(|e| fail(format!("missing {key} array file {}: {e}", file.display())))?;
    let n: usize = sidecar.shape.iter().product();
    if bytes.len() != n * bytes_per {
        return Err(fail(format!("{key} array holds {} bytes, shape {:?} needs {}", bytes.len(), sidecar.shape, n * bytes_per)));
    }
    if hex(&Sha256::digest(&bytes)) != a.sha256 {
        return Err(fail(format!("{key} array checksum mismatch")));
    }
    Ok(bytes)
}

pub fn load_volume(path: &Path) -> Result<VolumeSample> {
    let text = fs::read(path).at(path)?;
    let sidecar: Sidecar = serde_json::from_slice(&text).map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })?;
    if sidecar.format != FORMAT || sidecar.version != VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("unsupported container {} v{}", sidecar.format, sidecar.version),
        });
    }
    let image = read_array(path, &sidecar, "image", "float32-le", 4)?;
    let labels = read_array(path, &sidecar, "labels", "uint8", 1)?;
    let image = image.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    VolumeSample::new(sidecar.shape, image, labels, sidecar.meta)
}
