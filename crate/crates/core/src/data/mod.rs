//! Volumes, synthetic phantoms, preprocessing and on-disk formats.

pub mod container;
pub mod manifest;
pub mod nifti;
pub mod phantom;
pub mod preprocess;

use serde::{Deserialize, Serialize};

pub use manifest::{class_fractions, compute_class_fractions, split_counts, DatasetManifest, ManifestEntry, Split};
pub use phantom::{generate_phantom, PhantomSpec};
pub use preprocess::{augment_background_noise, augment_flip, flip_h, normalize_intensity, resize_crop_pad, to_unit_range};

/// Label codes used throughout.
pub const BACKGROUND: u8 = 0;
pub const VESSEL: u8 = 1;
pub const TUMOR: u8 = 2;
pub const LABEL_NAMES: [&str; 3] = ["background", "vessel", "tumor"];

/// Provenance and preprocessing record carried with each sample.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleMeta {
    pub spec_hash: Option<String>,
    pub seed: Option<u64>,
    /// `"per-volume"` once min-max normalized.
    pub normalization: Option<String>,
    /// Divided into [0, 1] for the network.
    pub unit_range: bool,
    pub resized_from: Option<[usize; 3]>,
    pub flipped: bool,
    pub noise_std: Option<f64>,
}

/// An image volume with its voxel labels, both `(D, H, W)` with W fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeSample {
    pub shape: [usize; 3],
    pub image: Vec<f32>,
    pub labels: Vec<u8>,
    pub meta: SampleMeta,
}

impl VolumeSample {
    pub fn new(shape: [usize; 3], image: Vec<f32>, labels: Vec<u8>, meta: SampleMeta) -> crate::Result<Self> {
        let s = Self { shape, image, labels, meta };
        s.validate()?;
        Ok(s)
    }

    pub fn voxels(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn validate(&self) -> crate::Result<()> {
        let n = self.voxels();
        if self.image.len() != n || self.labels.len() != n {
            return Err(crate::Error::Shape(format!(
                "shape {:?} holds {n} voxels but image has {} and labels {}",
                self.shape,
                self.image.len(),
                self.labels.len()
            )));
        }
        if let Some(l) = self.labels.iter().find(|&&l| l > TUMOR) {
            return Err(crate::Error::Shape(format!("label code {l} outside {{0, 1, 2}}")));
        }
        Ok(())
    }

    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.shape[1] + y) * self.shape[2] + x
    }

    /// Voxel count per label code.
    pub fn label_counts(&self) -> [u64; 3] {
        let mut c = [0u64; 3];
        for &l in &self.labels {
            c[l as usize] += 1;
        }
        c
    }

    /// Sub-volume starting at `origin`.
    pub fn crop(&self, origin: [usize; 3], size: [usize; 3]) -> Self {
        for a in 0..3 {
            assert!(origin[a] + size[a] <= self.shape[a], "crop exceeds the volume on axis {a}");
        }
        let n: usize = size.iter().product();
        let mut image = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for z in 0..size[0] {
            for y in 0..size[1] {
                let i = self.index(origin[0] + z, origin[1] + y, origin[2]);
                image.extend_from_slice(&self.image[i..i + size[2]]);
                labels.extend_from_slice(&self.labels[i..i + size[2]]);
            }
        }
        Self { shape: size, image, labels, meta: self.meta.clone() }
    }
}
