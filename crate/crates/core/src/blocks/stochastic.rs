use neurovasc_autograd::{Real, Tensor, Var};
use rand::Rng;

use crate::params::Ctx;

/// `x + branch` with per-sample branch dropping during training.
///
/// A kept branch is scaled by `1 / (1 - rate)`; with `rate = 1` the branch is
/// always dropped.
pub fn stochastic_depth<'t, T: Real>(ctx: &Ctx<'t, T>, x: &Var<'t, T>, branch: &Var<'t, T>, rate: f64) -> Var<'t, T> {
    assert!((0.0..=1.0).contains(&rate), "stochastic depth rate {rate} outside [0, 1]");
    if !ctx.training || rate == 0.0 {
        return x.add(branch);
    }
    let b = x.shape()[0];
    let mut shape = vec![1; x.shape().len()];
    shape[0] = b;
    let scale = T::of_f64(1.0 / (1.0 - rate));
    let mut rng = ctx.rng();
    let mask = Tensor::from_fn(shape, |_| if rng.random::<f64>() >= rate { scale } else { T::zero() });
    x.add(&branch.mul(&ctx.tape.constant(mask)))
}
