use std::rc::Rc;

use neurovasc_autograd::{Real, Tensor, Var};
use rand::Rng;

use super::layers::{join, ChannelNorm};
use crate::params::{Ctx, ParamStore};

/// Relative distances beyond this share one learned bias.
pub const MAX_RELATIVE: usize = 15;
/// Pre-sigmoid gate initialization (gate nearly closed).
pub const GATE_INIT: f64 = -4.0;

/// Self-attention along one spatial axis, gated per head and added residually.
#[derive(Clone, Debug)]
struct AxialPass {
    name: String,
    axis: usize,
    norm: ChannelNorm,
}

/// Sequential gated attention along D, then H, then W.
#[derive(Clone, Debug)]
pub struct GatedAxial {
    pub name: String,
    pub channels: usize,
    pub heads: usize,
    passes: Vec<AxialPass>,
}

impl GatedAxial {
    pub fn new(name: impl Into<String>, channels: usize, heads: usize) -> crate::Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(crate::Error::InvalidConfig(format!("axial attention: {channels} channels not divisible by {heads} heads")));
        }
        let name = name.into();
        let passes = [(2, "d"), (3, "h"), (4, "w")]
            .into_iter()
            .map(|(axis, tag)| {
                let p = join(&name, tag);
                AxialPass { norm: ChannelNorm { name: join(&p, "norm"), channels }, name: p, axis }
            })
            .collect();
        Ok(Self { name, channels, heads, passes })
    }

    pub fn num_params(&self) -> usize {
        let c = self.channels;
        let per = 2 * c + 3 * c * c + 3 * c + self.heads * (2 * MAX_RELATIVE + 1) + self.heads + c * c;
        per * self.passes.len()
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        let c = self.channels;
        for p in &self.passes {
            p.norm.init(store);
            store.learnable(join(&p.name, "qkv.weight"), Tensor::randn([c, 3 * c], (1.0 / c as f64).sqrt(), rng));
            store.learnable(join(&p.name, "qkv.bias"), Tensor::zeros([3 * c]));
            store.learnable(join(&p.name, "rel_bias"), Tensor::zeros([self.heads, 2 * MAX_RELATIVE + 1]));
            store.learnable(join(&p.name, "gate"), Tensor::full([self.heads], T::of_f64(GATE_INIT)));
            store.learnable(join(&p.name, "out.weight"), Tensor::randn([c, c], 0.01 * (1.0 / c as f64).sqrt(), rng));
        }
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Var<'t, T> {
        let mut h = x.clone();
        for p in &self.passes {
            h = h.add(&self.attend(ctx, p, &h));
        }
        h
    }

    fn attend<'t, T: Real>(&self, ctx: &Ctx<'t, T>, p: &AxialPass, x: &Var<'t, T>) -> Var<'t, T> {
        let (b, c, d, hh, w) = x.dims5();
        let heads = self.heads;
        let dh = c / heads;
        // token layout (B, o1, o2, L, C) with L the attended axis
        let perm: [usize; 5] = match p.axis {
            2 => [0, 3, 4, 2, 1],
            3 => [0, 2, 4, 3, 1],
            _ => [0, 2, 3, 4, 1],
        };
        let dims = [b, c, d, hh, w];
        let l = dims[p.axis];
        let n = dims[perm[0]] * dims[perm[1]] * dims[perm[2]];
        let normed = p.norm.forward(ctx, x, 1);
        let tokens = normed.permute(&perm).reshape(&[n, l, c]);
        let qkv = tokens
            .matmul(&ctx.param(&join(&p.name, "qkv.weight")))
            .add(&ctx.param(&join(&p.name, "qkv.bias")).reshape(&[1, 1, 3 * c]));
        let split = |i: usize| {
            qkv.narrow(2, i * c, c).reshape(&[n, l, heads, dh]).permute(&[0, 2, 1, 3]).reshape(&[n * heads, l, dh])
        };
        let (q, k, v) = (split(0), split(1), split(2));
        let scores = q.matmul_t(&k).scale(T::of_f64(1.0 / (dh as f64).sqrt())).reshape(&[n, heads, l, l]);
        let scores = scores.add(&self.relative_bias(ctx, p, l));
        let attn = scores.softmax(3).reshape(&[n * heads, l, l]);
        let gate = ctx.param(&join(&p.name, "gate")).sigmoid().reshape(&[1, heads, 1, 1]);
        let out = attn.matmul(&v).reshape(&[n, heads, l, dh]).mul(&gate);
        let out = out.permute(&[0, 2, 1, 3]).reshape(&[n, l, c]).matmul(&ctx.param(&join(&p.name, "out.weight")));
        let mut inverse = [0; 5];
        for (i, &a) in perm.iter().enumerate() {
            inverse[a] = i;
        }
        out.reshape(&[dims[perm[0]], dims[perm[1]], dims[perm[2]], l, c]).permute(&inverse)
    }

    /// Clipped relative-position bias, shape `(1, heads, L, L)`.
    fn relative_bias<'t, T: Real>(&self, ctx: &Ctx<'t, T>, p: &AxialPass, l: usize) -> Var<'t, T> {
        let width = 2 * MAX_RELATIVE + 1;
        let r = MAX_RELATIVE as isize;
        let mut idx = Vec::with_capacity(self.heads * l * l);
        for hd in 0..self.heads {
            for i in 0..l {
                for j in 0..l {
                    let rel = (j as isize - i as isize).clamp(-r, r) + r;
                    idx.push(hd * width + rel as usize);
                }
            }
        }
        ctx.param(&join(&p.name, "rel_bias")).gather(Rc::new(idx), &[1, self.heads, l, l])
    }
}
