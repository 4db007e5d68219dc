use neurovasc_autograd::{concat, Real, Var};
use rand::Rng;

use super::layers::{join, Conv3d};
use crate::params::{Ctx, ParamStore};

pub const DEFAULT_RATES: [[usize; 3]; 3] = [[1, 1, 1], [1, 2, 2], [1, 3, 3]];

/// Parallel dilated 3×3×3 convolutions fused back to `C` channels by a pointwise conv.
#[derive(Clone, Debug)]
pub struct Aspp {
    pub name: String,
    pub channels: usize,
    pub rates: Vec<[usize; 3]>,
    branches: Vec<Conv3d>,
    fuse: Conv3d,
}

impl Aspp {
    pub fn new(name: impl Into<String>, channels: usize, rates: &[[usize; 3]]) -> Self {
        let name = name.into();
        let branches = rates
            .iter()
            .enumerate()
            .map(|(i, &r)| Conv3d::same(join(&name, &format!("branch{i}")), channels, channels, [3; 3], r))
            .collect();
        let fuse = Conv3d::pointwise(join(&name, "fuse"), rates.len() * channels, channels);
        Self { name, channels, rates: rates.to_vec(), branches, fuse }
    }

    pub fn num_params(&self) -> usize {
        self.branches.iter().map(Conv3d::num_params).sum::<usize>() + self.fuse.num_params()
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        for b in &self.branches {
            b.init(store, rng);
        }
        self.fuse.init(store, rng);
    }

    /// Outputs of the individual branches, before fusion.
    pub fn branch_outputs<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Vec<Var<'t, T>> {
        self.branches.iter().map(|b| b.forward(ctx, x)).collect()
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Var<'t, T> {
        let outs = self.branch_outputs(ctx, x);
        let refs: Vec<&Var<'t, T>> = outs.iter().collect();
        self.fuse.forward(ctx, &concat(ctx.tape, &refs, 1))
    }
}
