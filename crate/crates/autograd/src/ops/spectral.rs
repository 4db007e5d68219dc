use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

/// In-place 3D FFT plans for one `(D, H, W)` grid.
pub struct Fft3<T: Real> {
    dims: [usize; 3],
    fwd: [Arc<dyn Fft<T>>; 3],
    inv: [Arc<dyn Fft<T>>; 3],
}

impl<T: Real> Fft3<T> {
    pub fn new(dims: [usize; 3]) -> Self {
        let mut p = FftPlanner::new();
        let fwd = dims.map(|n| p.plan_fft_forward(n));
        let inv = dims.map(|n| p.plan_fft_inverse(n));
        Self { dims, fwd, inv }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unnormalized forward transform.
    pub fn forward(&self, buf: &mut [Complex<T>]) {
        self.run(buf, &self.fwd);
    }

    /// Inverse transform including the `1/N` factor.
    pub fn inverse(&self, buf: &mut [Complex<T>]) {
        self.run(buf, &self.inv);
        let s = T::one() / T::of_usize(self.len());
        for v in buf.iter_mut() {
            *v = *v * s;
        }
    }

    fn run(&self, buf: &mut [Complex<T>], plans: &[Arc<dyn Fft<T>>; 3]) {
        let [d, h, w] = self.dims;
        assert_eq!(buf.len(), d * h * w);
        plans[2].process(buf);
        let mut line = vec![Complex::new(T::zero(), T::zero()); d.max(h)];
        for z in 0..d {
            for x in 0..w {
                for y in 0..h {
                    line[y] = buf[(z * h + y) * w + x];
                }
                plans[1].process(&mut line[..h]);
                for y in 0..h {
                    buf[(z * h + y) * w + x] = line[y];
                }
            }
        }
        let plane = h * w;
        for p in 0..plane {
            for z in 0..d {
                line[z] = buf[z * plane + p];
            }
            plans[0].process(&mut line[..d]);
            for z in 0..d {
                buf[z * plane + p] = line[z];
            }
        }
    }
}

/// `Re(IFFT(m ⊙ FFT(x)))` for each `(D, H, W)` volume in `x`.
fn masked_filter<T: Real>(plan: &Fft3<T>, x: &[T], mask: &[T], out: &mut [T], spectra: Option<&mut Vec<Complex<T>>>) {
    let n = plan.len();
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    let mut keep = spectra;
    for (xs, os) in x.chunks(n).zip(out.chunks_mut(n)) {
        for (b, &v) in buf.iter_mut().zip(xs) {
            *b = Complex::new(v, T::zero());
        }
        plan.forward(&mut buf);
        if let Some(s) = keep.as_deref_mut() {
            s.extend_from_slice(&buf);
        }
        for (b, &m) in buf.iter_mut().zip(mask) {
            *b = *b * m;
        }
        plan.inverse(&mut buf);
        for (o, b) in os.iter_mut().zip(&buf) {
            *o = b.re;
        }
    }
}

impl<'t, T: Real> Var<'t, T> {
    /// Frequency-domain filtering of a `(B, C, D, H, W)` tensor with a real
    /// mask of shape `(D, H, W)` shared over batch and channels.
    pub fn spectral_filter(&self, mask: &Var<'t, T>) -> Var<'t, T> {
        let (_, _, d, h, w) = self.dims5();
        assert_eq!(mask.shape(), &[d, h, w], "spectral mask shape");
        let plan = Fft3::new([d, h, w]);
        let n = plan.len();
        let x = self.value().data();
        let mut out = vec![T::zero(); x.len()];
        let track_mask = mask.is_tracked() && self.tape().grad_enabled();
        let mut spectra = track_mask.then(|| Vec::with_capacity(x.len()));
        masked_filter(&plan, x, mask.value().data(), &mut out, spectra.as_mut());
        let mv = mask.value_rc();
        let shape = self.shape().to_vec();
        let out = Tensor::from_vec(shape.clone(), out);
        self.tape().op(out, &[self, mask], move |g, need| {
            let gd = g.data();
            let m = mv.data();
            let dx = need[0].then(|| {
                let mut dx = vec![T::zero(); gd.len()];
                masked_filter(&plan, gd, m, &mut dx, None);
                Tensor::from_vec(shape.clone(), dx)
            });
            let dm = need[1].then(|| {
                let xs = spectra.as_ref().expect("input spectra were not retained");
                let mut dm = vec![T::zero(); n];
                let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
                for (k, gs) in gd.chunks(n).enumerate() {
                    for (b, &v) in buf.iter_mut().zip(gs) {
                        *b = Complex::new(v, T::zero());
                    }
                    plan.forward(&mut buf);
                    for ((acc, xk), gk) in dm.iter_mut().zip(&xs[k * n..(k + 1) * n]).zip(&buf) {
                        *acc += (*xk * gk.conj()).re;
                    }
                }
                let s = T::one() / T::of_usize(n);
                Tensor::from_vec(vec![d, h, w], dm.into_iter().map(|v| v * s).collect())
            });
            vec![dx, dm]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;
    use rand::SeedableRng;

    #[test]
    fn ones_mask_is_identity() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::randn([2, 3, 4, 6, 5], 1.0, &mut rng));
        let m = tape.constant(Tensor::ones([4, 6, 5]));
        let y = x.spectral_filter(&m);
        assert!(y.value().max_abs_diff(x.value()) < 1e-12);
    }

    #[test]
    fn zero_mask_annihilates() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(4);
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::randn([1, 2, 3, 4, 4], 1.0, &mut rng));
        let m = tape.constant(Tensor::zeros([3, 4, 4]));
        assert_eq!(x.spectral_filter(&m).value().max_abs(), 0.0);
    }
}
