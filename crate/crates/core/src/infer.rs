//! Whole-volume prediction by overlapping windows, and dataset evaluation.

use std::time::Instant;

use neurovasc_autograd::{Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::VolumeSample;
use crate::metrics::{MetricsReport, VolumeMetrics};
use crate::network::{Model, SPATIAL_MULTIPLE};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Blend {
    Uniform,
    /// Gaussian weights peaking at the window center.
    Center,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlidingWindowSpec {
    pub roi: [usize; 3],
    pub overlap: f64,
    pub blend: Blend,
}

impl Default for SlidingWindowSpec {
    fn default() -> Self {
        Self { roi: [96, 96, 64], overlap: 0.5, blend: Blend::Center }
    }
}

impl SlidingWindowSpec {
    pub fn new(roi: [usize; 3], overlap: f64) -> Self {
        Self { roi, overlap, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.roi.iter().any(|&r| r == 0 || r % SPATIAL_MULTIPLE != 0) {
            return Err(Error::InvalidConfig(format!("window {:?} must be positive multiples of {SPATIAL_MULTIPLE}", self.roi)));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::InvalidConfig(format!("window overlap {} outside [0, 1)", self.overlap)));
        }
        Ok(())
    }

    fn stride(&self, axis: usize) -> usize {
        ((self.roi[axis] as f64 * (1.0 - self.overlap)).floor() as usize).max(1)
    }

    /// Window origins along one axis of extent `n`, and the padded extent they cover.
    pub fn origins(&self, axis: usize, n: usize) -> (Vec<usize>, usize) {
        let (r, s) = (self.roi[axis], self.stride(axis));
        let tiles = (n - r).div_ceil(s) + 1;
        ((0..tiles).map(|t| t * s).collect(), (tiles - 1) * s + r)
    }

    fn weights(&self) -> Vec<f64> {
        let [d, h, w] = self.roi;
        let axis = |n: usize| -> Vec<f64> {
            match self.blend {
                Blend::Uniform => vec![1.0; n],
                Blend::Center => {
                    let sigma = n as f64 / 8.0;
                    let c = (n as f64 - 1.0) / 2.0;
                    (0..n).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect()
                }
            }
        };
        let (wd, wh, ww) = (axis(d), axis(h), axis(w));
        let mut out = Vec::with_capacity(d * h * w);
        for &a in &wd {
            for &b in &wh {
                for &c in &ww {
                    out.push((a * b * c).max(1e-3));
                }
            }
        }
        out
    }
}

/// Image of a sample as the network sees it, in `[0, 1]`.
pub fn model_input(s: &VolumeSample) -> Vec<f32> {
    if s.meta.unit_range {
        s.image.clone()
    } else {
        s.image.iter().map(|v| v / 255.0).collect()
    }
}

/// Channel-axis softmax of `(B, C, ...)` logits.
pub fn softmax_channels(logits: &Tensor<f32>) -> Tensor<f32> {
    let tape = Tape::no_grad();
    tape.constant(logits.clone()).softmax(1).value().clone()
}

/// Blended class probabilities, shape `(C, D, H, W)`, for a unit-range image.
pub fn sliding_window_infer(model: &Model<f32>, image: &[f32], shape: [usize; 3], spec: &SlidingWindowSpec) -> Result<Tensor<f32>> {
    spec.validate()?;
    if image.len() != shape.iter().product::<usize>() {
        return Err(Error::Shape(format!("image of {} voxels does not match shape {shape:?}", image.len())));
    }
    for a in 0..3 {
        if spec.roi[a] > shape[a] {
            return Err(Error::Shape(format!("window {:?} larger than volume {shape:?}", spec.roi)));
        }
    }
    let c = model.config().num_classes;
    let (oz, pd) = spec.origins(0, shape[0]);
    let (oy, ph) = spec.origins(1, shape[1]);
    let (ox, pw) = spec.origins(2, shape[2]);
    // reflect without repeating the edge voxel
    let reflect = |i: usize, n: usize| if i < n { i } else { 2 * (n - 1) - i };
    let [rd, rh, rw] = spec.roi;
    let rvol = rd * rh * rw;
    let pvol = pd * ph * pw;
    let blend = spec.weights();
    let mut acc = vec![0.0f64; c * pvol];
    let mut wsum = vec![0.0f64; pvol];
    let mut tile = vec![0.0f32; rvol];
    for &z0 in &oz {
        for &y0 in &oy {
            for &x0 in &ox {
                let mut t = 0;
                for z in z0..z0 + rd {
                    let sz = reflect(z, shape[0]);
                    for y in y0..y0 + rh {
                        let sy = reflect(y, shape[1]);
                        for x in x0..x0 + rw {
                            tile[t] = image[(sz * shape[1] + sy) * shape[2] + reflect(x, shape[2])];
                            t += 1;
                        }
                    }
                }
                let logits = model.logits(&Tensor::from_vec([1, 1, rd, rh, rw], tile.clone()))?;
                let probs = softmax_channels(&logits);
                let p = probs.data();
                let mut t = 0;
                for z in z0..z0 + rd {
                    for y in y0..y0 + rh {
                        let row = (z * ph + y) * pw + x0;
                        for j in 0..rw {
                            let w = blend[t];
                            wsum[row + j] += w;
                            for k in 0..c {
                                acc[k * pvol + row + j] += w * p[k * rvol + t] as f64;
                            }
                            t += 1;
                        }
                    }
                }
            }
        }
    }
    let [d, h, w] = shape;
    let mut out = Vec::with_capacity(c * d * h * w);
    for k in 0..c {
        for z in 0..d {
            for y in 0..h {
                let row = (z * ph + y) * pw;
                out.extend((0..w).map(|x| (acc[k * pvol + row + x] / wsum[row + x]) as f32));
            }
        }
    }
    Ok(Tensor::from_vec([c, d, h, w], out))
}

/// Per-voxel argmax of a `(C, D, H, W)` probability volume.
pub fn argmax_labels(probs: &Tensor<f32>) -> Vec<u8> {
    let c = probs.shape()[0];
    let vol = probs.numel() / c;
    let p = probs.data();
    (0..vol)
        .map(|i| {
            let mut best = 0;
            for k in 1..c {
                if p[k * vol + i] > p[best * vol + i] {
                    best = k;
                }
            }
            best as u8
        })
        .collect()
}

/// Hard prediction of one sample and the seconds it took.
pub fn predict_labels(model: &Model<f32>, s: &VolumeSample, spec: &SlidingWindowSpec) -> Result<(Vec<u8>, f64)> {
    let t = Instant::now();
    let probs = sliding_window_infer(model, &model_input(s), s.shape, spec)?;
    let labels = argmax_labels(&probs);
    Ok((labels, t.elapsed().as_secs_f64()))
}

/// Per-volume metrics on argmax masks and their mean; predictions are returned
/// alongside so callers can render them.
pub fn evaluate_with_predictions(
    model: &Model<f32>,
    dataset: &[(String, VolumeSample)],
    spec: &SlidingWindowSpec,
) -> Result<(MetricsReport, Vec<Vec<u8>>)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("nothing to evaluate".into()));
    }
    let c = model.config().num_classes;
    let mut volumes = Vec::with_capacity(dataset.len());
    let mut preds = Vec::with_capacity(dataset.len());
    for (name, s) in dataset {
        let (pred, secs) = predict_labels(model, s, spec)?;
        volumes.push(VolumeMetrics::compute(name.clone(), &pred, &s.labels, c, secs)?);
        preds.push(pred);
    }
    Ok((MetricsReport::aggregate(volumes, model.net.num_params())?, preds))
}

pub fn evaluate(model: &Model<f32>, dataset: &[(String, VolumeSample)], spec: &SlidingWindowSpec) -> Result<MetricsReport> {
    Ok(evaluate_with_predictions(model, dataset, spec)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origins_cover_the_volume() {
        let spec = SlidingWindowSpec::new([32, 32, 16], 0.5);
        for n in 32..100 {
            let (o, padded) = spec.origins(0, n);
            assert!(padded >= n && padded - n < 16, "n={n} padded={padded}");
            assert_eq!(*o.last().unwrap() + 32, padded);
        }
    }
}
