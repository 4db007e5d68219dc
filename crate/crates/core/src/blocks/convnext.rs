use neurovasc_autograd::{Real, Var};
use rand::Rng;

use super::layers::{join, ChannelNorm, Conv3d};
use crate::params::{Ctx, ParamStore};

/// Depthwise 5³ conv → channel LayerNorm → 1×1 expand ×4 → GELU → 1×1 project → residual.
#[derive(Clone, Debug)]
pub struct ConvNeXt3d {
    pub name: String,
    pub channels: usize,
    dw: Conv3d,
    norm: ChannelNorm,
    expand: Conv3d,
    project: Conv3d,
}

impl ConvNeXt3d {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        let name = name.into();
        Self {
            dw: Conv3d::depthwise(join(&name, "dw"), channels, [5; 3]),
            norm: ChannelNorm { name: join(&name, "norm"), channels },
            expand: Conv3d::pointwise(join(&name, "expand"), channels, 4 * channels),
            project: Conv3d::pointwise(join(&name, "project"), 4 * channels, channels),
            name,
            channels,
        }
    }

    pub fn num_params(&self) -> usize {
        self.dw.num_params() + self.norm.num_params() + self.expand.num_params() + self.project.num_params()
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        self.dw.init(store, rng);
        self.norm.init(store);
        self.expand.init(store, rng);
        self.project.init(store, rng);
    }

    /// The residual branch alone.
    pub fn branch<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Var<'t, T> {
        let h = self.norm.forward(ctx, &self.dw.forward(ctx, x), 1);
        self.project.forward(ctx, &self.expand.forward(ctx, &h).gelu())
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Var<'t, T> {
        x.add(&self.branch(ctx, x))
    }
}
