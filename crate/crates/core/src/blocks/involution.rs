use neurovasc_autograd::{Real, Var};
use rand::Rng;

use super::layers::{join, Conv3d};
use crate::params::{Ctx, ParamStore};

/// Involution with kernels generated per voxel and shared by the channels of a group.
#[derive(Clone, Debug)]
pub struct Involution3d {
    pub name: String,
    pub channels: usize,
    pub kernel: usize,
    pub groups: usize,
    reduce: Conv3d,
    expand: Conv3d,
}

impl Involution3d {
    pub fn new(name: impl Into<String>, channels: usize, kernel: usize, groups: usize, reduction: usize) -> crate::Result<Self> {
        if groups == 0 || channels % groups != 0 {
            return Err(crate::Error::InvalidConfig(format!("involution: {channels} channels not divisible by {groups} groups")));
        }
        if kernel % 2 == 0 {
            return Err(crate::Error::InvalidConfig(format!("involution kernel {kernel} must be odd")));
        }
        let name = name.into();
        let hidden = (channels / reduction).max(1);
        Ok(Self {
            reduce: Conv3d::pointwise(join(&name, "reduce"), channels, hidden),
            expand: Conv3d::pointwise(join(&name, "expand"), hidden, groups * kernel.pow(3)),
            name,
            channels,
            kernel,
            groups,
        })
    }

    pub fn num_params(&self) -> usize {
        self.reduce.num_params() + self.expand.num_params()
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        self.reduce.init(store, rng);
        self.expand.init(store, rng);
    }

    /// Generated kernels, shape `(B, G·K³, D, H, W)`.
    pub fn kernels<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Var<'t, T> {
        self.expand.forward(ctx, &self.reduce.forward(ctx, x).relu())
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Var<'t, T> {
        x.involution_apply(&self.kernels(ctx, x), self.kernel)
    }
}
