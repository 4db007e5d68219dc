//! Dataset manifests: sample paths with split tags and training class fractions.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::container::load_volume;
use super::VolumeSample;
use crate::error::IoContext;
use crate::{Error, Result};

/// Default train:val:test proportions.
pub const DEFAULT_SPLIT: [f64; 3] = [100.0, 10.0, 27.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Sidecar path relative to the manifest's directory.
    pub path: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Per-class voxel fractions over the training split.
    pub class_fractions: Vec<f64>,
    pub split_fractions: [f64; 3],
    pub seed: Option<u64>,
    pub spec_hash: Option<String>,
}

/// Largest-remainder apportionment of `n` samples over normalized `fractions`.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(*f >= 0.0 && f.is_finite())) || !(total > 0.0) {
        return Err(Error::InvalidConfig(format!("split fractions {fractions:?} must be non-negative with a positive sum")));
    }
    let exact: Vec<f64> = fractions.iter().map(|f| f / total * n as f64).collect();
    let mut counts: [usize; 3] = std::array::from_fn(|i| exact[i].floor() as usize);
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let short = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    Ok(counts)
}

/// Voxel fractions of the three label codes over a set of samples.
pub fn class_fractions<'a>(samples: impl IntoIterator<Item = &'a VolumeSample>) -> Result<Vec<f64>> {
    let mut counts = [0u64; 3];
    let mut any = false;
    for s in samples {
        any = true;
        for (c, n) in counts.iter_mut().zip(s.label_counts()) {
            *c += n;
        }
    }
    let total: u64 = counts.iter().sum();
    if !any || total == 0 {
        return Err(Error::EmptyDataset("no training voxels to compute class fractions from".into()));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Class fractions over the manifest's training split, loading each sample.
pub fn compute_class_fractions(manifest: &DatasetManifest, root: &Path) -> Result<Vec<f64>> {
    let samples = manifest.load_split(root, Split::Train)?;
    class_fractions(&samples)
}

impl DatasetManifest {
    /// Tags `paths` in order: the first block train, then val, then test.
    pub fn with_split(paths: Vec<String>, split_fractions: [f64; 3]) -> Result<Self> {
        let [tr, va, _] = split_counts(paths.len(), split_fractions)?;
        let entries = paths
            .into_iter()
            .enumerate()
            .map(|(i, path)| {
                let split = if i < tr {
                    Split::Train
                } else if i < tr + va {
                    Split::Val
                } else {
                    Split::Test
                };
                ManifestEntry { path, split }
            })
            .collect();
        Ok(Self { entries, class_fractions: Vec::new(), split_fractions, seed: None, spec_hash: None })
    }

    pub fn paths(&self, split: Split) -> Vec<&str> {
        self.entries.iter().filter(|e| e.split == split).map(|e| e.path.as_str()).collect()
    }

    pub fn load_split(&self, root: &Path, split: Split) -> Result<Vec<VolumeSample>> {
        self.paths(split).into_iter().map(|p| load_volume(&root.join(p))).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).at(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })
    }

    /// Directory that entry paths are relative to.
    pub fn root_of(path: &Path) -> PathBuf {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}
