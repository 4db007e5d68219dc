use std::collections::BTreeMap;

use neurovasc_autograd::{Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::params::{Kind, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 8e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction; moments are kept in `f64`.
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub step: u64,
    pub(crate) m: BTreeMap<String, Vec<f64>>,
    pub(crate) v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn update<T: Real>(&mut self, store: &mut ParamStore<T>, grads: &BTreeMap<String, Tensor<T>>) {
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (path, g) in grads {
            assert_eq!(store.kind(path), Some(Kind::Learnable), "gradient for non-learnable {path}");
            let p = store.get_mut(path).expect("checked above");
            let n = p.numel();
            let m = self.m.entry(path.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(path.clone()).or_insert_with(|| vec![0.0; n]);
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi.as_f64();
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                let upd = c.lr * (*mi / bc1) / ((*vi / bc2).sqrt() + c.eps);
                *x = T::of_f64(x.as_f64() - upd);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut s = ParamStore::<f64>::new();
        s.learnable("w", Tensor::from_vec([2], vec![1.0, 1.0]));
        let mut g = BTreeMap::new();
        g.insert("w".to_string(), Tensor::from_vec([2], vec![0.5, -3.0]));
        let mut opt = Adam::new(AdamConfig { lr: 0.1, ..Default::default() });
        opt.update(&mut s, &g);
        let w = s.get("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] - 1.1).abs() < 1e-6, "{w:?}");
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut s = ParamStore::<f64>::new();
        s.learnable("w", Tensor::from_vec([1], vec![3.0]));
        let mut opt = Adam::new(AdamConfig { lr: 0.05, ..Default::default() });
        for _ in 0..500 {
            let w = s.get("w").unwrap().data()[0];
            let mut g = BTreeMap::new();
            g.insert("w".to_string(), Tensor::from_vec([1], vec![2.0 * (w - 1.0)]));
            opt.update(&mut s, &g);
        }
        assert!((s.get("w").unwrap().data()[0] - 1.0).abs() < 1e-2);
    }
}
