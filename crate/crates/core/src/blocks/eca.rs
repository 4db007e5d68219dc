use neurovasc_autograd::{Conv3dOpts, Real, Var};
use rand::Rng;

use super::layers::join;
use crate::params::{Ctx, ParamStore};

/// Efficient channel attention: pooled channel descriptor → 1D conv across
/// channels → sigmoid → per-channel rescale.
#[derive(Clone, Debug)]
pub struct Eca {
    pub name: String,
    pub kernel: usize,
}

impl Eca {
    pub fn new(name: impl Into<String>, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "ECA kernel must be odd");
        Self { name: name.into(), kernel }
    }

    pub fn num_params(&self) -> usize {
        self.kernel
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        let b = 1.0 / (self.kernel as f64).sqrt();
        store.learnable(join(&self.name, "weight"), neurovasc_autograd::Tensor::uniform([1, 1, self.kernel, 1, 1], -b, b, rng));
    }

    /// Per-channel scale factors, shape `(B, C, 1, 1, 1)`.
    pub fn scales<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Var<'t, T> {
        let (b, c, ..) = x.dims5();
        let pooled = x.mean_axes(&[2, 3, 4]).reshape(&[b, 1, c, 1, 1]);
        let opts = Conv3dOpts { padding: [self.kernel / 2, 0, 0], ..Default::default() };
        let w = ctx.param(&join(&self.name, "weight"));
        pooled.conv3d(&w, None, opts).sigmoid().reshape(&[b, c, 1, 1, 1])
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Var<'t, T> {
        x.mul(&self.scales(ctx, x))
    }
}
