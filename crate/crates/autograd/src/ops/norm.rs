use crate::ops::shape::split_at_axis;
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Batch statistics produced by a training-mode [`Var::batch_norm`] call.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, as used for running estimates.
    pub var: Vec<T>,
}

/// Shared backward of a normalization over groups of `n` values:
/// `dx = inv_std / n * (n * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))`.
fn normalized_backward<'a, T: Real>(dxhat: &'a [T], xhat: &'a [T], inv_std: T, n: usize) -> impl Iterator<Item = T> + 'a {
    let nt = T::of_usize(n);
    let s1: T = dxhat.iter().copied().sum();
    let s2: T = dxhat.iter().zip(xhat).map(|(&a, &b)| a * b).sum();
    dxhat.iter().zip(xhat).map(move |(&d, &xh)| inv_std / nt * (nt * d - s1 - xh * s2))
}

impl<'t, T: Real> Var<'t, T> {
    /// Batch normalization over axis 1 of a `(B, C, ...)` tensor.
    ///
    /// With `running = None` the batch statistics are used (training) and
    /// returned for the caller's running-average update; otherwise the given
    /// `(mean, var)` are used as constants.
    pub fn batch_norm(
        &self,
        gamma: &Var<'t, T>,
        beta: &Var<'t, T>,
        running: Option<(&[T], &[T])>,
        eps: f64,
    ) -> (Var<'t, T>, Option<BatchStats<T>>) {
        let shape = self.shape().to_vec();
        let (b, c) = (shape[0], shape[1]);
        let vol: usize = shape[2..].iter().product();
        let n = b * vol;
        assert_eq!(gamma.shape(), &[c]);
        assert_eq!(beta.shape(), &[c]);
        let x = self.value().data();
        let (gm, bt) = (gamma.value().data(), beta.value().data());
        let eps = T::of_f64(eps);
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); c];
        let mut stats = None;
        match running {
            None => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = T::zero();
                    for bi in 0..b {
                        s += x[(bi * c + ch) * vol..(bi * c + ch + 1) * vol].iter().copied().sum::<T>();
                    }
                    let mu = s / T::of_usize(n);
                    let mut ss = T::zero();
                    for bi in 0..b {
                        for &v in &x[(bi * c + ch) * vol..(bi * c + ch + 1) * vol] {
                            ss += (v - mu) * (v - mu);
                        }
                    }
                    let biased = ss / T::of_usize(n);
                    mean[ch] = mu;
                    var[ch] = if n > 1 { ss / T::of_usize(n - 1) } else { biased };
                    inv_std[ch] = (biased + eps).sqrt().recip();
                }
                for bi in 0..b {
                    for ch in 0..c {
                        let r = (bi * c + ch) * vol..(bi * c + ch + 1) * vol;
                        for (o, &v) in xhat[r.clone()].iter_mut().zip(&x[r]) {
                            *o = (v - mean[ch]) * inv_std[ch];
                        }
                    }
                }
                stats = Some(BatchStats { mean, var });
            }
            Some((rm, rv)) => {
                assert_eq!(rm.len(), c);
                for ch in 0..c {
                    inv_std[ch] = (rv[ch] + eps).sqrt().recip();
                }
                for bi in 0..b {
                    for ch in 0..c {
                        let r = (bi * c + ch) * vol..(bi * c + ch + 1) * vol;
                        for (o, &v) in xhat[r.clone()].iter_mut().zip(&x[r]) {
                            *o = (v - rm[ch]) * inv_std[ch];
                        }
                    }
                }
            }
        }
        let mut y = vec![T::zero(); x.len()];
        for bi in 0..b {
            for ch in 0..c {
                let r = (bi * c + ch) * vol..(bi * c + ch + 1) * vol;
                for (o, &xh) in y[r.clone()].iter_mut().zip(&xhat[r]) {
                    *o = gm[ch] * xh + bt[ch];
                }
            }
        }
        let training = running.is_none();
        let gv = gamma.value_rc();
        let out = Tensor::from_vec(shape.clone(), y);
        let var = self.tape().op(out, &[self, gamma, beta], move |g, need| {
            let gd = g.data();
            let gm = gv.data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for bi in 0..b {
                for ch in 0..c {
                    let r = (bi * c + ch) * vol..(bi * c + ch + 1) * vol;
                    for (&gg, &xh) in gd[r.clone()].iter().zip(&xhat[r]) {
                        dgamma[ch] += gg * xh;
                        dbeta[ch] += gg;
                    }
                }
            }
            let dx = need[0].then(|| {
                let mut dx = vec![T::zero(); gd.len()];
                for ch in 0..c {
                    if training {
                        // gather the channel across the batch
                        let mut dxh = Vec::with_capacity(n);
                        let mut xh = Vec::with_capacity(n);
                        for bi in 0..b {
                            let r = (bi * c + ch) * vol..(bi * c + ch + 1) * vol;
                            dxh.extend(gd[r.clone()].iter().map(|&v| v * gm[ch]));
                            xh.extend_from_slice(&xhat[r]);
                        }
                        for (k, v) in normalized_backward(&dxh, &xh, inv_std[ch], n).enumerate() {
                            let (bi, j) = (k / vol, k % vol);
                            dx[(bi * c + ch) * vol + j] = v;
                        }
                    } else {
                        let s = gm[ch] * inv_std[ch];
                        for bi in 0..b {
                            let r = (bi * c + ch) * vol..(bi * c + ch + 1) * vol;
                            for (o, &gg) in dx[r.clone()].iter_mut().zip(&gd[r]) {
                                *o = gg * s;
                            }
                        }
                    }
                }
                Tensor::from_vec(shape.clone(), dx)
            });
            vec![
                dx,
                need[1].then(|| Tensor::from_vec(vec![c], dgamma)),
                need[2].then(|| Tensor::from_vec(vec![c], dbeta)),
            ]
        });
        (var, stats)
    }

    /// Layer normalization over a single `axis`, with per-feature affine
    /// parameters of shape `(shape[axis])`.
    pub fn layer_norm(&self, axis: usize, gamma: &Var<'t, T>, beta: &Var<'t, T>, eps: f64) -> Var<'t, T> {
        let shape = self.shape().to_vec();
        let (outer, n, inner) = split_at_axis(&shape, axis);
        assert_eq!(gamma.shape(), &[n]);
        assert_eq!(beta.shape(), &[n]);
        let x = self.value().data();
        let (gm, bt) = (gamma.value().data(), beta.value().data());
        let eps = T::of_f64(eps);
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); outer * inner];
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let mu = (0..n).map(|j| x[idx(j)]).sum::<T>() / T::of_usize(n);
                let var = (0..n).map(|j| (x[idx(j)] - mu) * (x[idx(j)] - mu)).sum::<T>() / T::of_usize(n);
                let is = (var + eps).sqrt().recip();
                inv_std[o * inner + i] = is;
                for j in 0..n {
                    let xh = (x[idx(j)] - mu) * is;
                    xhat[idx(j)] = xh;
                    y[idx(j)] = gm[j] * xh + bt[j];
                }
            }
        }
        let gv = gamma.value_rc();
        let out = Tensor::from_vec(shape.clone(), y);
        self.tape().op(out, &[self, gamma, beta], move |g, need| {
            let gd = g.data();
            let gm = gv.data();
            let mut dgamma = vec![T::zero(); n];
            let mut dbeta = vec![T::zero(); n];
            let mut dx = need[0].then(|| vec![T::zero(); gd.len()]);
            let mut dxh = vec![T::zero(); n];
            let mut xh = vec![T::zero(); n];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| (o * n + j) * inner + i;
                    for j in 0..n {
                        let (gg, h) = (gd[idx(j)], xhat[idx(j)]);
                        dgamma[j] += gg * h;
                        dbeta[j] += gg;
                        dxh[j] = gg * gm[j];
                        xh[j] = h;
                    }
                    if let Some(dx) = dx.as_mut() {
                        for (j, v) in normalized_backward(&dxh, &xh, inv_std[o * inner + i], n).enumerate() {
                            dx[idx(j)] = v;
                        }
                    }
                }
            }
            vec![
                dx.map(|d| Tensor::from_vec(shape.clone(), d)),
                need[1].then(|| Tensor::from_vec(vec![n], dgamma)),
                need[2].then(|| Tensor::from_vec(vec![n], dbeta)),
            ]
        })
    }
}
