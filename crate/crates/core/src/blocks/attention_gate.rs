use neurovasc_autograd::{Conv3dOpts, Real, Var};
use rand::Rng;

use super::layers::{join, Conv3d};
use crate::params::{Ctx, ParamStore};

/// Additive grid attention on a skip connection, gated by the coarser decoder signal.
#[derive(Clone, Debug)]
pub struct AttentionGate {
    pub name: String,
    pub skip_channels: usize,
    pub gate_channels: usize,
    pub inter_channels: usize,
    theta: Conv3d,
    phi: Conv3d,
    psi: Conv3d,
}

impl AttentionGate {
    pub fn new(name: impl Into<String>, skip_channels: usize, gate_channels: usize) -> Self {
        let name = name.into();
        let inter = (skip_channels / 2).max(1);
        let theta = Conv3d {
            name: join(&name, "theta"),
            cin: skip_channels,
            cout: inter,
            kernel: [2; 3],
            opts: Conv3dOpts { stride: [2; 3], ..Default::default() },
            bias: false,
        };
        Self {
            phi: Conv3d::pointwise(join(&name, "phi"), gate_channels, inter),
            psi: Conv3d::pointwise(join(&name, "psi"), inter, 1),
            theta,
            skip_channels,
            gate_channels,
            inter_channels: inter,
            name,
        }
    }

    pub fn num_params(&self) -> usize {
        self.theta.num_params() + self.phi.num_params() + self.psi.num_params()
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        self.theta.init(store, rng);
        self.phi.init(store, rng);
        self.psi.init(store, rng);
    }

    /// Pre-sigmoid attention field at the gate resolution, shape `(B, 1, D/2, H/2, W/2)`.
    pub fn logits<'t, T: Real>(&self, ctx: &Ctx<'t, T>, skip: &Var<'t, T>, g: &Var<'t, T>) -> crate::Result<Var<'t, T>> {
        let (_, cs, d, h, w) = skip.dims5();
        let (_, cg, gd, gh, gw) = g.dims5();
        if cs != self.skip_channels || cg != self.gate_channels {
            return Err(crate::Error::Shape(format!(
                "{}: expected channels ({}, {}), got ({cs}, {cg})",
                self.name, self.skip_channels, self.gate_channels
            )));
        }
        if [d, h, w] != [2 * gd, 2 * gh, 2 * gw] {
            return Err(crate::Error::Shape(format!(
                "{}: skip spatial {:?} must be twice the gate spatial {:?}",
                self.name,
                [d, h, w],
                [gd, gh, gw]
            )));
        }
        let f = self.theta.forward(ctx, skip).add(&self.phi.forward(ctx, g)).relu();
        Ok(self.psi.forward(ctx, &f))
    }

    /// Attention coefficients in `(0, 1)` at the skip resolution.
    pub fn coefficients<'t, T: Real>(&self, ctx: &Ctx<'t, T>, skip: &Var<'t, T>, g: &Var<'t, T>) -> crate::Result<Var<'t, T>> {
        Ok(self.logits(ctx, skip, g)?.sigmoid().upsample_trilinear_2x())
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, skip: &Var<'t, T>, g: &Var<'t, T>) -> crate::Result<Var<'t, T>> {
        Ok(skip.mul(&self.coefficients(ctx, skip, g)?))
    }
}
