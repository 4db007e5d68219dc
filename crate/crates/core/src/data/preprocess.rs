//! Intensity normalization, crop/pad resizing and augmentation.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{VolumeSample, BACKGROUND};

/// Upper end of the normalized intensity range.
pub const INTENSITY_MAX: f64 = 255.0;

/// Affine min-max map onto `[0, 255]`; a constant image maps to zeros.
pub fn normalize_intensity(image: &[f32]) -> Vec<f32> {
    let (lo, hi) = image.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v as f64), b.max(v as f64)));
    if image.is_empty() || hi <= lo {
        return vec![0.0; image.len()];
    }
    let scale = INTENSITY_MAX / (hi - lo);
    image.iter().map(|&v| ((v as f64 - lo) * scale).clamp(0.0, INTENSITY_MAX) as f32).collect()
}

/// Normalizes a sample in place of its image, recording the mode in its metadata.
pub fn normalize_sample(mut s: VolumeSample) -> VolumeSample {
    s.image = normalize_intensity(&s.image);
    s.meta.normalization = Some("per-volume".into());
    s
}

/// Divides a `[0, 255]` image into `[0, 1]`, the range the network sees.
pub fn to_unit_range(mut s: VolumeSample) -> VolumeSample {
    let inv = (1.0 / INTENSITY_MAX) as f32;
    s.image.iter_mut().for_each(|v| *v *= inv);
    s.meta.unit_range = true;
    s
}

/// Center crop on axes larger than `target`, symmetric zero padding on smaller ones.
pub fn resize_crop_pad(s: &VolumeSample, target: [usize; 3]) -> VolumeSample {
    assert!(target.iter().all(|&t| t >= 1), "target extents must be ≥ 1");
    if s.shape == target {
        return s.clone();
    }
    // source index of target index 0, possibly negative
    let offset: [isize; 3] = std::array::from_fn(|a| (s.shape[a] as isize - target[a] as isize).div_euclid(2));
    let n: usize = target.iter().product();
    let mut image = vec![0.0f32; n];
    let mut labels = vec![BACKGROUND; n];
    let mut o = 0;
    for z in 0..target[0] {
        let sz = z as isize + offset[0];
        for y in 0..target[1] {
            let sy = y as isize + offset[1];
            for x in 0..target[2] {
                let sx = x as isize + offset[2];
                let inside = sz >= 0
                    && sy >= 0
                    && sx >= 0
                    && (sz as usize) < s.shape[0]
                    && (sy as usize) < s.shape[1]
                    && (sx as usize) < s.shape[2];
                if inside {
                    let i = s.index(sz as usize, sy as usize, sx as usize);
                    image[o] = s.image[i];
                    labels[o] = s.labels[i];
                }
                o += 1;
            }
        }
    }
    let mut meta = s.meta.clone();
    meta.resized_from.get_or_insert(s.shape);
    VolumeSample { shape: target, image, labels, meta }
}

/// Reverses the H axis of image and labels together.
pub fn flip_h(s: &VolumeSample) -> VolumeSample {
    let [d, h, w] = s.shape;
    let mut out = s.clone();
    for z in 0..d {
        for y in 0..h {
            let src = s.index(z, h - 1 - y, 0);
            let dst = s.index(z, y, 0);
            out.image[dst..dst + w].copy_from_slice(&s.image[src..src + w]);
            out.labels[dst..dst + w].copy_from_slice(&s.labels[src..src + w]);
        }
    }
    out.meta.flipped = !s.meta.flipped;
    out
}

/// [`flip_h`] with probability `p`, otherwise the sample unchanged.
pub fn augment_flip(s: &VolumeSample, p: f64, rng: &mut impl Rng) -> VolumeSample {
    assert!((0.0..=1.0).contains(&p), "flip probability {p} outside [0, 1]");
    if p > 0.0 && rng.random::<f64>() < p {
        flip_h(s)
    } else {
        s.clone()
    }
}

/// Adds zero-mean Gaussian noise to background voxels only.
pub fn augment_background_noise(s: &VolumeSample, std: f64, rng: &mut impl Rng) -> VolumeSample {
    assert!(std >= 0.0 && std.is_finite(), "noise std must be finite and ≥ 0");
    let mut out = s.clone();
    if std == 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, std).expect("valid std");
    for (v, &l) in out.image.iter_mut().zip(&s.labels) {
        if l == BACKGROUND {
            *v += normal.sample(rng) as f32;
        }
    }
    out.meta.noise_std = Some(std);
    out
}
