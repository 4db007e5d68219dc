//! The multi-scale bottleneck fusion module and the cross-domain fusion block.

use neurovasc_autograd::{concat, Real, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::layers::join;
use crate::blocks::{
    stochastic_depth, Aspp, Conv3d, ConvNeXt3d, Eca, GatedAxial, Involution3d, LogKernel, SpectralMask, SphericalConv3d,
};
use crate::params::{Ctx, ParamStore};
use crate::{Error, Result};

fn check_channels<T: Real>(module: &str, expected: usize, x: &Var<'_, T>) -> Result<()> {
    if x.shape().len() != 5 {
        return Err(Error::Shape(format!("{module}: expected a rank-5 input, got shape {:?}", x.shape())));
    }
    let c = x.shape()[1];
    if c != expected {
        return Err(Error::Shape(format!("{module}: expected {expected} channels, got {c}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Msc2fConfig {
    pub channels: usize,
    pub log_sigma: f64,
    pub log_size: usize,
    pub aspp_rates: Vec<[usize; 3]>,
    pub eca_kernel: usize,
    /// Spatial grid at which the spectral mask is stored.
    pub mask_grid: [usize; 3],
}

impl Default for Msc2fConfig {
    fn default() -> Self {
        Self {
            channels: 256,
            log_sigma: 1.0,
            log_size: 5,
            aspp_rates: crate::blocks::aspp::DEFAULT_RATES.to_vec(),
            eca_kernel: 3,
            mask_grid: [6, 6, 4],
        }
    }
}

impl Msc2fConfig {
    pub fn new(channels: usize, mask_grid: [usize; 3]) -> Self {
        Self { channels, mask_grid, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::InvalidConfig("msc2f.channels must be at least 1".into()));
        }
        if self.aspp_rates.is_empty() || self.aspp_rates.iter().flatten().any(|&r| r == 0) {
            return Err(Error::InvalidConfig("msc2f.aspp_rates must be non-empty and positive".into()));
        }
        if self.eca_kernel % 2 == 0 {
            return Err(Error::InvalidConfig(format!("msc2f.eca_kernel {} must be odd", self.eca_kernel)));
        }
        if self.mask_grid.contains(&0) {
            return Err(Error::InvalidConfig("msc2f.mask_grid entries must be positive".into()));
        }
        LogKernel::new(self.log_sigma, self.log_size).map(|_| ())
    }
}

/// ASPP context → edge and frequency tokens → channel-attended composite →
/// residual sum of two pointwise projections.
#[derive(Clone, Debug)]
pub struct Msc2f {
    pub name: String,
    pub cfg: Msc2fConfig,
    pub aspp: Aspp,
    pub log: LogKernel,
    pub mask: SpectralMask,
    depthwise: Conv3d,
    pub eca: Eca,
    restore: Conv3d,
    proj_context: Conv3d,
    proj_fused: Conv3d,
}

/// Intermediate tensors of one fusion pass.
pub struct Msc2fTrace<'t, T: Real> {
    pub aspp: Var<'t, T>,
    pub edge: Var<'t, T>,
    pub freq: Var<'t, T>,
    /// `[input, edge, freq]` along channels.
    pub composite: Var<'t, T>,
    /// Composite after depthwise conv, channel attention and restoration to `C`.
    pub fused: Var<'t, T>,
    pub output: Var<'t, T>,
}

impl Msc2f {
    pub fn new(name: impl Into<String>, cfg: Msc2fConfig) -> Result<Self> {
        cfg.validate()?;
        let name = name.into();
        let c = cfg.channels;
        Ok(Self {
            aspp: Aspp::new(join(&name, "aspp"), c, &cfg.aspp_rates),
            log: LogKernel::new(cfg.log_sigma, cfg.log_size)?,
            mask: SpectralMask::new(join(&name, "fsa"), cfg.mask_grid),
            depthwise: Conv3d::depthwise(join(&name, "depthwise"), 3 * c, [3; 3]),
            eca: Eca::new(join(&name, "eca"), cfg.eca_kernel),
            restore: Conv3d::pointwise(join(&name, "restore"), 3 * c, c),
            proj_context: Conv3d::pointwise(join(&name, "proj_context"), c, c),
            proj_fused: Conv3d::pointwise(join(&name, "proj_fused"), c, c),
            name,
            cfg,
        })
    }

    pub fn num_params(&self) -> usize {
        self.aspp.num_params()
            + self.mask.num_params()
            + self.depthwise.num_params()
            + self.eca.num_params()
            + self.restore.num_params()
            + self.proj_context.num_params()
            + self.proj_fused.num_params()
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        self.aspp.init(store, rng);
        self.mask.init(store);
        self.depthwise.init(store, rng);
        self.eca.init(store, rng);
        self.restore.init(store, rng);
        self.proj_context.init(store, rng);
        self.proj_fused.init(store, rng);
    }

    pub fn trace<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Msc2fTrace<'t, T>> {
        check_channels("msc2f", self.cfg.channels, x)?;
        let aspp = self.aspp.forward(ctx, x);
        let edge = self.log.apply(&aspp);
        let freq = self.mask.forward(ctx, &aspp);
        let composite = concat(ctx.tape, &[x, &edge, &freq], 1);
        let attended = self.eca.forward(ctx, &self.depthwise.forward(ctx, &composite));
        let fused = self.restore.forward(ctx, &attended);
        let output = self.proj_context.forward(ctx, &aspp).add(&self.proj_fused.forward(ctx, &fused));
        Ok(Msc2fTrace { aspp, edge, freq, composite, fused, output })
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.trace(ctx, x)?.output)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Cda2fConfig {
    pub channels: usize,
    pub use_involution: bool,
    pub use_fsa: bool,
    pub use_spherical: bool,
    pub use_convnext: bool,
    pub fusion_scale_init: f64,
    pub drop_path_rate: f64,
    pub heads: usize,
    pub involution_kernel: usize,
    pub involution_groups: usize,
    pub involution_reduction: usize,
    pub spherical_size: usize,
    pub mask_grid: [usize; 3],
}

impl Default for Cda2fConfig {
    fn default() -> Self {
        Self {
            channels: 128,
            use_involution: true,
            use_fsa: true,
            use_spherical: true,
            use_convnext: true,
            fusion_scale_init: 1.0,
            drop_path_rate: 0.1,
            heads: 4,
            involution_kernel: 3,
            involution_groups: 1,
            involution_reduction: 4,
            spherical_size: 5,
            mask_grid: [12, 12, 8],
        }
    }
}

impl Cda2fConfig {
    pub fn new(channels: usize, mask_grid: [usize; 3]) -> Self {
        Self { channels, mask_grid, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.channels == 0 {
            return bad("cda2f.channels must be at least 1".into());
        }
        if !(self.use_involution || self.use_fsa || self.use_spherical || self.use_convnext) {
            return bad("cda2f needs at least one enabled branch".into());
        }
        if !(0.0..=1.0).contains(&self.drop_path_rate) {
            return bad(format!("cda2f.drop_path_rate {} outside [0, 1]", self.drop_path_rate));
        }
        if !self.fusion_scale_init.is_finite() {
            return bad("cda2f.fusion_scale_init must be finite".into());
        }
        if self.heads == 0 || self.channels % self.heads != 0 {
            return bad(format!("cda2f: {} channels not divisible by {} heads", self.channels, self.heads));
        }
        if self.involution_groups == 0 || self.channels % self.involution_groups != 0 {
            return bad(format!("cda2f: {} channels not divisible by {} involution groups", self.channels, self.involution_groups));
        }
        if self.involution_kernel % 2 == 0 || self.spherical_size % 2 == 0 {
            return bad("cda2f kernel sizes must be odd".into());
        }
        if self.involution_reduction == 0 {
            return bad("cda2f.involution_reduction must be positive".into());
        }
        if self.mask_grid.contains(&0) {
            return bad("cda2f.mask_grid entries must be positive".into());
        }
        Ok(())
    }
}

/// Four parallel branches (involution, spectral, spherical, ConvNeXt), merged,
/// residually added under stochastic depth, then gated axial attention.
#[derive(Clone, Debug)]
pub struct Cda2f {
    pub name: String,
    pub cfg: Cda2fConfig,
    pub involution: Option<Involution3d>,
    pub fsa: Option<SpectralMask>,
    pub spherical: Option<SphericalConv3d>,
    pub convnext: Option<ConvNeXt3d>,
    pub axial: GatedAxial,
}

impl Cda2f {
    pub fn new(name: impl Into<String>, cfg: Cda2fConfig) -> Result<Self> {
        cfg.validate()?;
        let name = name.into();
        let c = cfg.channels;
        Ok(Self {
            involution: cfg
                .use_involution
                .then(|| {
                    Involution3d::new(join(&name, "involution"), c, cfg.involution_kernel, cfg.involution_groups, cfg.involution_reduction)
                })
                .transpose()?,
            fsa: cfg.use_fsa.then(|| SpectralMask::new(join(&name, "fsa"), cfg.mask_grid)),
            spherical: cfg.use_spherical.then(|| SphericalConv3d::new(join(&name, "spherical"), c, c, cfg.spherical_size)),
            convnext: cfg.use_convnext.then(|| ConvNeXt3d::new(join(&name, "convnext"), c)),
            axial: GatedAxial::new(join(&name, "axial"), c, cfg.heads)?,
            name,
            cfg,
        })
    }

    pub fn fusion_scale_path(&self) -> String {
        join(&self.name, "fusion_scale")
    }

    pub fn num_params(&self) -> usize {
        self.involution.as_ref().map_or(0, Involution3d::num_params)
            + self.fsa.as_ref().map_or(0, SpectralMask::num_params)
            + self.spherical.as_ref().map_or(0, SphericalConv3d::num_params)
            + self.convnext.as_ref().map_or(0, ConvNeXt3d::num_params)
            + self.axial.num_params()
            + 1
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        if let Some(b) = &self.involution {
            b.init(store, rng);
        }
        if let Some(b) = &self.fsa {
            b.init(store);
        }
        if let Some(b) = &self.spherical {
            b.init(store, rng);
        }
        if let Some(b) = &self.convnext {
            b.init(store, rng);
        }
        store.learnable(self.fusion_scale_path(), Tensor::full([1], T::of_f64(self.cfg.fusion_scale_init)));
        self.axial.init(store, rng);
    }

    /// Scaled branch sum plus the ConvNeXt block, before the stochastic-depth residual.
    pub fn multi_domain<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        check_channels("cda2f", self.cfg.channels, x)?;
        let mut branches = Vec::new();
        if let Some(b) = &self.involution {
            branches.push(b.forward(ctx, x));
        }
        if let Some(b) = &self.fsa {
            branches.push(b.forward(ctx, x));
        }
        if let Some(b) = &self.spherical {
            branches.push(b.forward(ctx, x));
        }
        let scale = ctx.param(&self.fusion_scale_path()).reshape(&[1, 1, 1, 1, 1]);
        let summed = branches.into_iter().reduce(|a, b| a.add(&b)).map(|s| s.mul(&scale));
        let conv = self.convnext.as_ref().map(|b| b.forward(ctx, x));
        Ok(match (summed, conv) {
            (Some(s), Some(c)) => s.add(&c),
            (Some(s), None) => s,
            (None, Some(c)) => c,
            (None, None) => unreachable!("validated: at least one branch"),
        })
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let md = self.multi_domain(ctx, x)?;
        let merged = stochastic_depth(ctx, x, &md, self.cfg.drop_path_rate);
        Ok(self.axial.forward(ctx, &merged))
    }
}
