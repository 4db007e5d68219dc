//! Encoder–decoder with attention-gated skips, cross-domain fusion at the
//! deepest encoder and decoder levels and multi-scale fusion at the bottleneck.

use neurovasc_autograd::{concat, Real, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::layers::join;
use crate::blocks::{downsample, dropout, AttentionGate, BlockConfig, Conv3d, DilatedBlock, Upsample};
use crate::fusion::{Cda2f, Cda2fConfig, Msc2f, Msc2fConfig};
use crate::params::{Ctx, ParamStore};
use crate::{Error, Result};

/// Spatial extents must be divisible by this (four 2× poolings).
pub const SPATIAL_MULTIPLE: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub channels: [usize; 5],
    pub num_classes: usize,
    pub input_channels: usize,
    pub dropout_rate: f64,
    pub use_msc2f: bool,
    pub use_cda2f: bool,
    pub use_attention_gates: bool,
    /// Dilation of the dilated blocks at levels 1–3.
    pub dilation: usize,
    pub kernel_size: usize,
    /// Reference input extent; spectral masks are stored at this grid scaled to their level.
    pub input_shape: [usize; 3],
    pub msc2f: Msc2fConfig,
    pub cda2f: Cda2fConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::with_channels([16, 32, 64, 128, 256])
    }
}

impl ModelConfig {
    /// Consistent configuration for the given widths at the default reference shape.
    pub fn with_channels(channels: [usize; 5]) -> Self {
        Self::with_shape(channels, [96, 96, 64])
    }

    pub fn with_shape(channels: [usize; 5], input_shape: [usize; 3]) -> Self {
        let grid = |f: usize| input_shape.map(|n| (n / f).max(1));
        Self {
            channels,
            num_classes: 3,
            input_channels: 1,
            dropout_rate: 0.2,
            use_msc2f: true,
            use_cda2f: true,
            use_attention_gates: true,
            dilation: 2,
            kernel_size: 3,
            input_shape,
            msc2f: Msc2fConfig::new(channels[4], grid(16)),
            cda2f: Cda2fConfig::new(channels[3], grid(8)),
        }
    }

    /// Desk-scale widths sized for 64×64×32 phantoms.
    pub fn tiny() -> Self {
        Self::with_shape([8, 16, 32, 64, 128], [64, 64, 32])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.channels[0] == 0 || self.channels.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("channels {:?} must be positive and strictly increasing", self.channels));
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes {} must be at least 2", self.num_classes));
        }
        if self.input_channels == 0 {
            return bad("input_channels must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.dilation == 0 || self.kernel_size % 2 == 0 {
            return bad("dilation must be positive and kernel_size odd".into());
        }
        if let Some(axis) = self.input_shape.iter().position(|n| n % SPATIAL_MULTIPLE != 0 || *n == 0) {
            return bad(format!(
                "input_shape axis {} = {} is not a positive multiple of {SPATIAL_MULTIPLE}",
                AXES[axis], self.input_shape[axis]
            ));
        }
        if self.use_msc2f {
            if self.msc2f.channels != self.channels[4] {
                return bad(format!("msc2f.channels {} must equal channels[4] = {}", self.msc2f.channels, self.channels[4]));
            }
            self.msc2f.validate()?;
        }
        if self.use_cda2f {
            if self.cda2f.channels != self.channels[3] {
                return bad(format!("cda2f.channels {} must equal channels[3] = {}", self.cda2f.channels, self.channels[3]));
            }
            self.cda2f.validate()?;
        }
        Ok(())
    }

    fn block(&self, cin: usize, cout: usize, dilation: usize) -> BlockConfig {
        let mut b = BlockConfig::new(cin, cout).with_dilation(dilation);
        b.kernel_size = [self.kernel_size; 3];
        b
    }
}

const AXES: [&str; 3] = ["D", "H", "W"];

/// One named entry of the parameter breakdown.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleParams {
    pub module: String,
    pub params: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSummary {
    pub parameter_count: usize,
    pub breakdown: Vec<ModuleParams>,
    /// `[B, C, D, H, W]` with `B` and spatial dims symbolic (0) except channels.
    pub input_channels: usize,
    pub output_channels: usize,
    pub spatial_multiple: usize,
}

#[derive(Clone, Debug)]
struct EncoderLevel {
    block: DilatedBlock,
    cda2f: Option<Cda2f>,
}

#[derive(Clone, Debug)]
struct DecoderLevel {
    up: Upsample,
    gate: Option<AttentionGate>,
    block: DilatedBlock,
    cda2f: Option<Cda2f>,
}

#[derive(Clone, Debug)]
pub struct Network {
    pub cfg: ModelConfig,
    encoder: Vec<EncoderLevel>,
    bottleneck: DilatedBlock,
    msc2f: Option<Msc2f>,
    /// Ordered from the deepest level (4) to level 1.
    decoder: Vec<DecoderLevel>,
    head: Conv3d,
}

impl Network {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let ch = cfg.channels;
        let level_dilation = |level: usize| if level < 3 { cfg.dilation } else { 1 };
        let mut encoder = Vec::with_capacity(4);
        for level in 0..4 {
            let name = format!("enc{}", level + 1);
            let cin = if level == 0 { cfg.input_channels } else { ch[level - 1] };
            let block = DilatedBlock::new(join(&name, "block"), cfg.block(cin, ch[level], level_dilation(level)));
            let cda2f = (level == 3 && cfg.use_cda2f).then(|| Cda2f::new(join(&name, "cda2f"), cfg.cda2f.clone())).transpose()?;
            encoder.push(EncoderLevel { block, cda2f });
        }
        let bottleneck = DilatedBlock::new("bottleneck.block", cfg.block(ch[3], ch[4], 1));
        let msc2f = cfg.use_msc2f.then(|| Msc2f::new("bottleneck.msc2f", cfg.msc2f.clone())).transpose()?;
        let mut decoder = Vec::with_capacity(4);
        for level in (0..4).rev() {
            let name = format!("dec{}", level + 1);
            let coarse = ch[level + 1];
            let fine = ch[level];
            decoder.push(DecoderLevel {
                up: Upsample { name: join(&name, "up"), cin: coarse, cout: fine },
                gate: cfg.use_attention_gates.then(|| AttentionGate::new(join(&name, "gate"), fine, coarse)),
                block: DilatedBlock::new(join(&name, "block"), cfg.block(2 * fine, fine, level_dilation(level))),
                cda2f: (level == 3 && cfg.use_cda2f).then(|| Cda2f::new(join(&name, "cda2f"), cfg.cda2f.clone())).transpose()?,
            });
        }
        let head = Conv3d::pointwise("head", ch[0], cfg.num_classes);
        Ok(Self { cfg, encoder, bottleneck, msc2f, decoder, head })
    }

    /// Fresh parameter store with seeded initialization.
    pub fn init<T: Real>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for e in &self.encoder {
            e.block.init(&mut store, &mut rng);
            if let Some(m) = &e.cda2f {
                m.init(&mut store, &mut rng);
            }
        }
        self.bottleneck.init(&mut store, &mut rng);
        if let Some(m) = &self.msc2f {
            m.init(&mut store, &mut rng);
        }
        for d in &self.decoder {
            d.up.init(&mut store, &mut rng);
            if let Some(g) = &d.gate {
                g.init(&mut store, &mut rng);
            }
            d.block.init(&mut store, &mut rng);
            if let Some(m) = &d.cda2f {
                m.init(&mut store, &mut rng);
            }
        }
        self.head.init(&mut store, &mut rng);
        store
    }

    /// Learnable scalar counts per submodule, in forward order.
    pub fn breakdown(&self) -> Vec<ModuleParams> {
        let mut out = Vec::new();
        let mut push = |module: &str, params: usize| out.push(ModuleParams { module: module.to_string(), params });
        for e in &self.encoder {
            push(&e.block.name, e.block.num_params());
            if let Some(m) = &e.cda2f {
                push(&m.name, m.num_params());
            }
        }
        push(&self.bottleneck.name, self.bottleneck.num_params());
        if let Some(m) = &self.msc2f {
            push(&m.name, m.num_params());
        }
        for d in &self.decoder {
            push(&d.up.name, d.up.num_params());
            if let Some(g) = &d.gate {
                push(&g.name, g.num_params());
            }
            push(&d.block.name, d.block.num_params());
            if let Some(m) = &d.cda2f {
                push(&m.name, m.num_params());
            }
        }
        push(&self.head.name, self.head.num_params());
        out
    }

    pub fn num_params(&self) -> usize {
        self.breakdown().iter().map(|m| m.params).sum()
    }

    pub fn summary(&self) -> NetworkSummary {
        let breakdown = self.breakdown();
        NetworkSummary {
            parameter_count: breakdown.iter().map(|m| m.params).sum(),
            breakdown,
            input_channels: self.cfg.input_channels,
            output_channels: self.cfg.num_classes,
            spatial_multiple: SPATIAL_MULTIPLE,
        }
    }

    /// Checks an input shape against the channel and divisibility contract.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 5 {
            return Err(Error::Shape(format!("expected a (B, C, D, H, W) input, got shape {shape:?}")));
        }
        if shape[1] != self.cfg.input_channels {
            return Err(Error::Shape(format!("expected {} input channels, got {}", self.cfg.input_channels, shape[1])));
        }
        for (axis, &n) in AXES.iter().zip(&shape[2..]) {
            if n == 0 || n % SPATIAL_MULTIPLE != 0 {
                return Err(Error::Shape(format!("spatial axis {axis} has extent {n}, which is not a positive multiple of {SPATIAL_MULTIPLE}")));
            }
        }
        Ok(())
    }

    /// Per-encoder-level feature widths produced by a forward pass.
    pub fn encoder_widths<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Vec<usize>> {
        Ok(self.encode(ctx, x)?.0.iter().map(|s| s.shape()[1]).chain(std::iter::once(self.cfg.channels[4])).collect())
    }

    fn encode<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<(Vec<Var<'t, T>>, Var<'t, T>)> {
        self.check_input(x.shape())?;
        let rate = self.cfg.dropout_rate;
        let mut skips = Vec::with_capacity(4);
        let mut h = x.clone();
        for e in &self.encoder {
            let mut f = e.block.forward(ctx, &h)?;
            if let Some(m) = &e.cda2f {
                f = m.forward(ctx, &f)?;
            }
            let f = dropout(ctx, &f, rate);
            h = downsample(&f)?;
            skips.push(f);
        }
        let mut b = self.bottleneck.forward(ctx, &h)?;
        if let Some(m) = &self.msc2f {
            b = m.forward(ctx, &b)?;
        }
        Ok((skips, dropout(ctx, &b, rate)))
    }

    /// Voxel-wise class logits, shape `(B, num_classes, D, H, W)`.
    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (skips, mut h) = self.encode(ctx, x)?;
        for (d, skip) in self.decoder.iter().zip(skips.iter().rev()) {
            let up = d.up.forward(ctx, &h);
            let gated = match &d.gate {
                Some(g) => g.forward(ctx, skip, &h)?,
                None => skip.clone(),
            };
            let mut f = d.block.forward(ctx, &concat(ctx.tape, &[&gated, &up], 1))?;
            if let Some(m) = &d.cda2f {
                f = m.forward(ctx, &f)?;
            }
            h = dropout(ctx, &f, self.cfg.dropout_rate);
        }
        Ok(self.head.forward(ctx, &h))
    }
}

/// A network together with its parameters.
#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    pub net: Network,
    pub params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let net = Network::new(cfg)?;
        let params = net.init(seed);
        Ok(Self { net, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.cfg
    }

    /// Evaluation-mode logits without gradient tracking.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::no_grad();
        let ctx = Ctx::new(&tape, &self.params, false, 0);
        let input = tape.constant(x.clone());
        Ok(self.net.forward(&ctx, &input)?.value().clone())
    }
}
