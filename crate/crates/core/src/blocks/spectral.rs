//! Fixed Laplacian-of-Gaussian edge filter and the learnable spectral mask.

use std::f64::consts::PI;
use std::rc::Rc;

use neurovasc_autograd::{Conv3dOpts, Real, Tensor, Var};

use super::layers::join;
use crate::params::{Ctx, ParamStore};

/// Sampled LoG kernel on a cubic grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LogKernel {
    pub sigma: f64,
    pub size: usize,
    /// Raw samples, `size³` values in `(z, y, x)` order.
    pub raw: Vec<f64>,
    /// Raw samples minus their mean.
    pub weights: Vec<f64>,
}

/// `-(1/(π σ⁴)) (1 - r²/(2σ²)) exp(-r²/(2σ²))`.
pub fn log_value(r2: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    -(1.0 / (PI * s2 * s2)) * (1.0 - r2 / (2.0 * s2)) * (-r2 / (2.0 * s2)).exp()
}

impl LogKernel {
    pub fn new(sigma: f64, size: usize) -> crate::Result<Self> {
        if size % 2 == 0 || size == 0 {
            return Err(crate::Error::InvalidConfig(format!("LoG kernel size {size} must be odd")));
        }
        if sigma <= 0.0 {
            return Err(crate::Error::InvalidConfig(format!("LoG sigma {sigma} must be positive")));
        }
        let r = (size / 2) as isize;
        let mut raw = Vec::with_capacity(size * size * size);
        for z in -r..=r {
            for y in -r..=r {
                for x in -r..=r {
                    raw.push(log_value((z * z + y * y + x * x) as f64, sigma));
                }
            }
        }
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        let weights = raw.iter().map(|v| v - mean).collect();
        Ok(Self { sigma, size, raw, weights })
    }

    pub fn center_raw(&self) -> f64 {
        self.raw[self.raw.len() / 2]
    }

    /// Depthwise size-preserving application to every channel.
    pub fn apply<'t, T: Real>(&self, x: &Var<'t, T>) -> Var<'t, T> {
        let c = x.shape()[1];
        let k = self.size;
        let per: Vec<T> = self.weights.iter().map(|&w| T::of_f64(w)).collect();
        let w = Tensor::from_fn(vec![c, 1, k, k, k], |i| per[i % per.len()]);
        let opts = Conv3dOpts::same([k; 3], [1; 3]).with_groups(c);
        x.conv3d(&x.constant_like(w), None, opts)
    }
}

/// Learnable real mask over the 3D spectrum, shared by batch and channels.
///
/// The mask is stored at a reference grid; other grids read it by
/// nearest signed frequency.
#[derive(Clone, Debug)]
pub struct SpectralMask {
    pub name: String,
    pub grid: [usize; 3],
}

/// Signed frequency index of FFT bin `k` on an axis of length `n`.
fn signed_freq(k: usize, n: usize) -> isize {
    if k <= n / 2 {
        k as isize
    } else {
        k as isize - n as isize
    }
}

/// Bin of the reference axis (length `m`) nearest to bin `k` of an axis of length `n`.
fn nearest_bin(k: usize, n: usize, m: usize) -> usize {
    if n == m {
        return k;
    }
    let f = signed_freq(k, n) as f64 * m as f64 / n as f64;
    let r = f.round() as isize;
    let half = (m / 2) as isize;
    let r = r.clamp(-(m as isize - 1 - half), half);
    r.rem_euclid(m as isize) as usize
}

impl SpectralMask {
    pub fn new(name: impl Into<String>, grid: [usize; 3]) -> Self {
        Self { name: name.into(), grid }
    }

    pub fn path(&self) -> String {
        join(&self.name, "mask")
    }

    pub fn num_params(&self) -> usize {
        self.grid.iter().product()
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>) {
        store.learnable(self.path(), Tensor::ones(self.grid.to_vec()));
    }

    /// Mask resampled onto a `(D, H, W)` spectrum.
    pub fn resolve<'t, T: Real>(&self, ctx: &Ctx<'t, T>, dims: [usize; 3]) -> Var<'t, T> {
        let m = ctx.param(&self.path());
        if dims == self.grid {
            return m;
        }
        let [gd, gh, gw] = self.grid;
        let mut idx = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[0] {
            let rz = nearest_bin(z, dims[0], gd);
            for y in 0..dims[1] {
                let ry = nearest_bin(y, dims[1], gh);
                for x in 0..dims[2] {
                    idx.push((rz * gh + ry) * gw + nearest_bin(x, dims[2], gw));
                }
            }
        }
        m.gather(Rc::new(idx), &dims)
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Var<'t, T> {
        let (_, _, d, h, w) = x.dims5();
        x.spectral_filter(&self.resolve(ctx, [d, h, w]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_sums_to_zero_after_correction() {
        let k = LogKernel::new(1.0, 5).unwrap();
        assert!(k.weights.iter().sum::<f64>().abs() < 1e-10);
        assert_eq!(k.weights.len(), 125);
    }

    #[test]
    fn even_size_rejected() {
        assert!(LogKernel::new(1.0, 4).is_err());
    }

    #[test]
    fn nearest_bin_maps_identity_and_halves() {
        for k in 0..7 {
            assert_eq!(nearest_bin(k, 7, 7), k);
        }
        let v: Vec<usize> = (0..8).map(|k| nearest_bin(k, 8, 4)).collect();
        assert_eq!(v, vec![0, 1, 1, 2, 2, 3, 3, 3]);
    }
}
