use neurovasc_autograd::{Real, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{join, BatchNorm3d, Conv3d};
use crate::params::{Ctx, ParamStore};

/// Structural settings shared by the convolutional blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub dilation: [usize; 3],
    pub kernel_size: [usize; 3],
    pub drop_path_rate: f64,
    pub eca_kernel: usize,
    pub heads: usize,
}

impl BlockConfig {
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            dilation: [1; 3],
            kernel_size: [3; 3],
            drop_path_rate: 0.1,
            eca_kernel: 3,
            heads: 4,
        }
    }

    pub fn with_dilation(mut self, d: usize) -> Self {
        self.dilation = [d; 3];
        self
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(crate::Error::InvalidConfig("block channel counts must be ≥ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.drop_path_rate) {
            return Err(crate::Error::InvalidConfig(format!("drop_path_rate {} outside [0, 1]", self.drop_path_rate)));
        }
        if self.kernel_size.iter().any(|k| k % 2 == 0) || self.eca_kernel % 2 == 0 {
            return Err(crate::Error::InvalidConfig("kernel sizes must be odd".into()));
        }
        Ok(())
    }
}

/// Two units of dilated conv → batch norm → ReLU.
#[derive(Clone, Debug)]
pub struct DilatedBlock {
    pub name: String,
    pub cfg: BlockConfig,
    units: [(Conv3d, BatchNorm3d); 2],
}

impl DilatedBlock {
    pub fn new(name: impl Into<String>, cfg: BlockConfig) -> Self {
        let name = name.into();
        let unit = |i: usize, cin: usize| {
            let p = join(&name, &format!("unit{i}"));
            (
                Conv3d::same(join(&p, "conv"), cin, cfg.out_channels, cfg.kernel_size, cfg.dilation),
                BatchNorm3d::new(join(&p, "bn"), cfg.out_channels),
            )
        };
        let units = [unit(0, cfg.in_channels), unit(1, cfg.out_channels)];
        Self { name, cfg, units }
    }

    pub fn num_params(&self) -> usize {
        self.units.iter().map(|(c, b)| c.num_params() + b.num_params()).sum()
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        for (c, b) in &self.units {
            c.init(store, rng);
            b.init(store);
        }
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> crate::Result<Var<'t, T>> {
        let c = x.shape()[1];
        if c != self.cfg.in_channels {
            return Err(crate::Error::Shape(format!("{}: expected {} input channels, got {c}", self.name, self.cfg.in_channels)));
        }
        let mut h = x.clone();
        for (conv, bn) in &self.units {
            h = bn.forward(ctx, &conv.forward(ctx, &h)).relu();
        }
        Ok(h)
    }
}
