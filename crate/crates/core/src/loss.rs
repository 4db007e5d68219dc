//! Weighted cross-entropy, soft Dice and their weighted sum.

use neurovasc_autograd::{Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Floor applied to probabilities before the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Cross-entropy coefficient.
    pub alpha: f64,
    /// Dice coefficient.
    pub beta: f64,
    /// One weight per class; empty means "derive from the training split".
    pub class_weights: Vec<f64>,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: 2.0, beta: 1.0, class_weights: Vec::new(), epsilon: 1e-5 }
    }
}

impl LossConfig {
    pub fn with_weights(mut self, w: Vec<f64>) -> Self {
        self.class_weights = w;
        self
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::InvalidConfig(format!("loss coefficients must be ≥ 0, got α={} β={}", self.alpha, self.beta)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!("loss epsilon must be > 0, got {}", self.epsilon)));
        }
        if !self.class_weights.is_empty() {
            if self.class_weights.len() != num_classes {
                return Err(Error::InvalidConfig(format!(
                    "{} class weights given for {num_classes} classes",
                    self.class_weights.len()
                )));
            }
            if self.class_weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
                return Err(Error::InvalidConfig(format!("class weights must be positive, got {:?}", self.class_weights)));
            }
        }
        Ok(())
    }
}

/// Background weight 1 and `sqrt(f_bg / f_k)` for every other class.
pub fn class_weights_from_fractions(fractions: &[f64]) -> Result<Vec<f64>> {
    if fractions.len() < 2 {
        return Err(Error::InvalidConfig("class weights need at least two class fractions".into()));
    }
    if let Some(k) = fractions.iter().position(|f| !(*f > 0.0)) {
        return Err(Error::InvalidConfig(format!("class {k} has fraction {}, weights need positive fractions", fractions[k])));
    }
    let bg = fractions[0];
    Ok(fractions.iter().enumerate().map(|(k, &f)| if k == 0 { 1.0 } else { (bg / f).sqrt() }).collect())
}

/// `(B, C, D, H, W)` one-hot encoding of a `(B, D, H, W)` label array.
pub fn one_hot<T: Real>(labels: &[u8], batch: usize, num_classes: usize, spatial: [usize; 3]) -> Tensor<T> {
    let vol: usize = spatial.iter().product();
    assert_eq!(labels.len(), batch * vol, "label count does not match batch × volume");
    let mut out = Tensor::zeros([batch, num_classes, spatial[0], spatial[1], spatial[2]]);
    let d = out.data_mut();
    for b in 0..batch {
        for (i, &l) in labels[b * vol..(b + 1) * vol].iter().enumerate() {
            let l = l as usize;
            assert!(l < num_classes, "label {l} outside {num_classes} classes");
            d[(b * num_classes + l) * vol + i] = T::one();
        }
    }
    out
}

/// Mean over voxels of `−Σ_i w_i y_i log(max(p_i, floor))`.
pub fn wce_loss<'t, T: Real>(probs: &Var<'t, T>, target: &Tensor<T>, weights: &[f64]) -> Var<'t, T> {
    let shape = probs.shape();
    assert_eq!(shape, target.shape(), "probability and target shapes differ");
    let c = shape[1];
    assert_eq!(weights.len(), c, "one weight per class");
    let voxels = probs.value().numel() / c;
    let per_class: usize = shape[2..].iter().product();
    let weighted = Tensor::from_fn(shape.to_vec(), |i| T::of_f64(weights[(i / per_class) % c]) * target.data()[i]);
    let logp = probs.clamp_min(T::of_f64(LOG_FLOOR)).ln();
    logp.mul(&probs.constant_like(weighted)).sum_all().scale(-T::one() / T::of_usize(voxels))
}

/// Per-class soft Dice coefficient `(2Σpt + ε) / (Σp + Σt + ε)` over the whole batch.
pub fn soft_dice<'t, T: Real>(probs: &Var<'t, T>, target: &Tensor<T>, class: usize, eps: f64) -> Var<'t, T> {
    let p = probs.narrow(1, class, 1);
    let t = probs.constant_like(channel(target, class));
    let eps = T::of_f64(eps);
    let inter = p.mul(&t).sum_all().scale(T::of_f64(2.0)).add_scalar(eps);
    let denom = p.sum_all().add_scalar(t.value().sum() + eps);
    inter.div(&denom)
}

/// `1 − DSC`, averaged over the foreground classes `1..C`.
pub fn dice_loss<'t, T: Real>(probs: &Var<'t, T>, target: &Tensor<T>, eps: f64) -> Var<'t, T> {
    assert_eq!(probs.shape(), target.shape(), "probability and target shapes differ");
    let c = probs.shape()[1];
    assert!(c >= 2, "Dice loss needs a background and at least one foreground class");
    let mut total = soft_dice(probs, target, 1, eps);
    for k in 2..c {
        total = total.add(&soft_dice(probs, target, k, eps));
    }
    total.scale(-T::one() / T::of_usize(c - 1)).add_scalar(T::one())
}

/// The three loss values of one evaluation.
pub struct LossTerms<'t, T: Real> {
    pub total: Var<'t, T>,
    pub wce: Var<'t, T>,
    pub dice: Var<'t, T>,
}

/// `α·WCE + β·Dice` on class probabilities.
pub fn hybrid_loss<'t, T: Real>(probs: &Var<'t, T>, target: &Tensor<T>, cfg: &LossConfig) -> LossTerms<'t, T> {
    let c = probs.shape()[1];
    let weights = if cfg.class_weights.is_empty() { vec![1.0; c] } else { cfg.class_weights.clone() };
    let wce = wce_loss(probs, target, &weights);
    let dice = dice_loss(probs, target, cfg.epsilon);
    let total = wce.scale(T::of_f64(cfg.alpha)).add(&dice.scale(T::of_f64(cfg.beta)));
    LossTerms { total, wce, dice }
}

/// [`hybrid_loss`] on the softmax of `(B, C, D, H, W)` logits.
pub fn hybrid_loss_from_logits<'t, T: Real>(logits: &Var<'t, T>, target: &Tensor<T>, cfg: &LossConfig) -> LossTerms<'t, T> {
    hybrid_loss(&logits.softmax(1), target, cfg)
}

/// Slice `(B, 1, D, H, W)` of one class channel.
fn channel<T: Real>(t: &Tensor<T>, class: usize) -> Tensor<T> {
    let s = t.shape();
    let (b, c) = (s[0], s[1]);
    let vol: usize = s[2..].iter().product();
    let mut data = Vec::with_capacity(b * vol);
    for bi in 0..b {
        data.extend_from_slice(&t.data()[(bi * c + class) * vol..(bi * c + class + 1) * vol]);
    }
    let mut shape = s.to_vec();
    shape[1] = 1;
    Tensor::from_vec(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use neurovasc_autograd::Tape;

    #[test]
    fn weight_rule_on_the_reported_ratio() {
        let w = class_weights_from_fractions(&[73.52, 1.0]).unwrap();
        assert_eq!(w[0], 1.0);
        assert!((w[1] - 8.5744).abs() < 1e-3, "{}", w[1]);
    }

    #[test]
    fn zero_fraction_is_rejected() {
        assert!(class_weights_from_fractions(&[0.99, 0.01, 0.0]).is_err());
    }

    #[test]
    fn empty_prediction_and_target_give_zero_dice_loss() {
        let tape = Tape::<f64>::no_grad();
        let mut p = Tensor::zeros([1, 2, 2, 2, 2]);
        p.data_mut()[..8].fill(1.0);
        let t = p.clone();
        let loss = dice_loss(&tape.constant(p), &t, 1e-5);
        assert_eq!(loss.value().data()[0], 0.0);
    }
}
