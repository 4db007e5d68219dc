//! Parameterized primitives shared by every block.

use neurovasc_autograd::{Conv3dOpts, Real, Tensor, Var};
use rand::Rng;

use crate::params::{he_normal, Ctx, ParamStore};

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Clone, Debug)]
pub struct Conv3d {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: [usize; 3],
    pub opts: Conv3dOpts,
    pub bias: bool,
}

impl Conv3d {
    /// Size-preserving convolution with an odd kernel.
    pub fn same(name: impl Into<String>, cin: usize, cout: usize, kernel: [usize; 3], dilation: [usize; 3]) -> Self {
        Self { name: name.into(), cin, cout, kernel, opts: Conv3dOpts::same(kernel, dilation), bias: true }
    }

    pub fn pointwise(name: impl Into<String>, cin: usize, cout: usize) -> Self {
        Self::same(name, cin, cout, [1, 1, 1], [1, 1, 1])
    }

    /// Per-channel size-preserving convolution (`groups = channels`).
    pub fn depthwise(name: impl Into<String>, channels: usize, kernel: [usize; 3]) -> Self {
        let mut c = Self::same(name, channels, channels, kernel, [1, 1, 1]);
        c.opts.groups = channels;
        c
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn weight_shape(&self) -> [usize; 5] {
        [self.cout, self.cin / self.opts.groups, self.kernel[0], self.kernel[1], self.kernel[2]]
    }

    pub fn num_params(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + if self.bias { self.cout } else { 0 }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        let ws = self.weight_shape();
        let fan_in = ws[1] * ws[2] * ws[3] * ws[4];
        store.learnable(join(&self.name, "weight"), he_normal(&ws, fan_in, rng));
        if self.bias {
            store.learnable(join(&self.name, "bias"), Tensor::zeros([self.cout]));
        }
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Var<'t, T> {
        let w = ctx.param(&join(&self.name, "weight"));
        let b = self.bias.then(|| ctx.param(&join(&self.name, "bias")));
        x.conv3d(&w, b.as_ref(), self.opts)
    }
}

/// Weight of the newest batch in the running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct BatchNorm3d {
    pub name: String,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm3d {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self { name: name.into(), channels, eps: 1e-5, momentum: BN_MOMENTUM }
    }

    pub fn num_params(&self) -> usize {
        2 * self.channels
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>) {
        let c = self.channels;
        store.learnable(join(&self.name, "gamma"), Tensor::ones([c]));
        store.learnable(join(&self.name, "beta"), Tensor::zeros([c]));
        store.buffer(join(&self.name, "running_mean"), Tensor::zeros([c]));
        store.buffer(join(&self.name, "running_var"), Tensor::ones([c]));
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Var<'t, T> {
        let gamma = ctx.param(&join(&self.name, "gamma"));
        let beta = ctx.param(&join(&self.name, "beta"));
        if ctx.training {
            let (y, stats) = x.batch_norm(&gamma, &beta, None, self.eps);
            let stats = stats.expect("training mode returns batch statistics");
            let c = self.channels;
            ctx.record_update(join(&self.name, "running_mean"), Tensor::from_vec([c], stats.mean), self.momentum);
            ctx.record_update(join(&self.name, "running_var"), Tensor::from_vec([c], stats.var), self.momentum);
            y
        } else {
            let rm = ctx.buffer(&join(&self.name, "running_mean")).data();
            let rv = ctx.buffer(&join(&self.name, "running_var")).data();
            x.batch_norm(&gamma, &beta, Some((rm, rv)), self.eps).0
        }
    }
}

/// Affine layer normalization over the channel axis of a rank-5 tensor.
#[derive(Clone, Debug)]
pub struct ChannelNorm {
    pub name: String,
    pub channels: usize,
}

impl ChannelNorm {
    pub fn num_params(&self) -> usize {
        2 * self.channels
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>) {
        store.learnable(join(&self.name, "gamma"), Tensor::ones([self.channels]));
        store.learnable(join(&self.name, "beta"), Tensor::zeros([self.channels]));
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>, axis: usize) -> Var<'t, T> {
        let g = ctx.param(&join(&self.name, "gamma"));
        let b = ctx.param(&join(&self.name, "beta"));
        x.layer_norm(axis, &g, &b, 1e-6)
    }
}

/// Element-wise inverted dropout; identity in evaluation mode.
pub fn dropout<'t, T: Real>(ctx: &Ctx<'t, T>, x: &Var<'t, T>, rate: f64) -> Var<'t, T> {
    if !ctx.training || rate == 0.0 {
        return x.clone();
    }
    let keep = 1.0 - rate;
    let scale = T::of_f64(1.0 / keep);
    let mut rng = ctx.rng();
    let mask = Tensor::from_fn(x.shape().to_vec(), |_| if rng.random::<f64>() < keep { scale } else { T::zero() });
    x.mul(&ctx.tape.constant(mask))
}

/// 2×2×2 max pooling; errors on odd spatial extents.
pub fn downsample<'t, T: Real>(x: &Var<'t, T>) -> crate::Result<Var<'t, T>> {
    let (_, _, d, h, w) = x.dims5();
    for (axis, n) in ["D", "H", "W"].iter().zip([d, h, w]) {
        if n % 2 != 0 {
            return Err(crate::Error::Shape(format!("downsample needs even spatial dims, axis {axis} has {n}")));
        }
    }
    Ok(x.max_pool3d_2x())
}

/// Stride-2 transposed convolution doubling every spatial extent.
#[derive(Clone, Debug)]
pub struct Upsample {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
}

impl Upsample {
    pub fn num_params(&self) -> usize {
        self.cin * self.cout * 8 + self.cout
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        store.learnable(join(&self.name, "weight"), he_normal(&[self.cin, self.cout, 2, 2, 2], self.cin, rng));
        store.learnable(join(&self.name, "bias"), Tensor::zeros([self.cout]));
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Var<'t, T> {
        let w = ctx.param(&join(&self.name, "weight"));
        let b = ctx.param(&join(&self.name, "bias"));
        x.conv_transpose3d_2x(&w, Some(&b))
    }
}
