use crate::ops::shape::split_at_axis;
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Source indices and weights for 2x linear upsampling along an axis of
/// length `n` (half-pixel centers, edge clamped).
fn linear_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

impl<'t, T: Real> Var<'t, T> {
    /// 2x2x2 max pooling with stride 2 over a `(B, C, D, H, W)` tensor.
    pub fn max_pool3d_2x(&self) -> Var<'t, T> {
        let (b, c, d, h, w) = self.dims5();
        assert!(d % 2 == 0 && h % 2 == 0 && w % 2 == 0, "max_pool3d_2x needs even spatial dims");
        let (od, oh, ow) = (d / 2, h / 2, w / 2);
        let x = self.value().data();
        let n_out = b * c * od * oh * ow;
        let mut out = Vec::with_capacity(n_out);
        let mut arg = Vec::with_capacity(n_out);
        for bc in 0..b * c {
            let base = bc * d * h * w;
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        let first = base + (2 * z * h + 2 * y) * w + 2 * xx;
                        let mut best = x[first];
                        let mut bi = first;
                        for dz in 0..2 {
                            for dy in 0..2 {
                                let row = base + ((2 * z + dz) * h + 2 * y + dy) * w + 2 * xx;
                                for dx in 0..2 {
                                    let v = x[row + dx];
                                    if v > best {
                                        best = v;
                                        bi = row + dx;
                                    }
                                }
                            }
                        }
                        out.push(best);
                        arg.push(bi as u32);
                    }
                }
            }
        }
        let in_shape = self.shape().to_vec();
        let out = Tensor::from_vec(vec![b, c, od, oh, ow], out);
        self.tape().op(out, &[self], move |g, _| {
            let mut dx = Tensor::zeros(in_shape.clone());
            let dd = dx.data_mut();
            for (&i, &gv) in arg.iter().zip(g.data()) {
                dd[i as usize] += gv;
            }
            vec![Some(dx)]
        })
    }

    /// 2x linear upsampling along one axis.
    pub fn upsample_linear_2x(&self, axis: usize) -> Var<'t, T> {
        let shape = self.shape().to_vec();
        let (outer, n, inner) = split_at_axis(&shape, axis);
        let taps = linear_taps(n);
        let x = self.value().data();
        let mut out = vec![T::zero(); outer * 2 * n * inner];
        for o in 0..outer {
            for (j, &(i0, i1, lam)) in taps.iter().enumerate() {
                let (a, bw) = (T::of_f64(1.0 - lam), T::of_f64(lam));
                let dst = &mut out[(o * 2 * n + j) * inner..(o * 2 * n + j + 1) * inner];
                let s0 = &x[(o * n + i0) * inner..(o * n + i0 + 1) * inner];
                let s1 = &x[(o * n + i1) * inner..(o * n + i1 + 1) * inner];
                for ((d, &p), &q) in dst.iter_mut().zip(s0).zip(s1) {
                    *d = a * p + bw * q;
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = 2 * n;
        let out = Tensor::from_vec(out_shape, out);
        self.tape().op(out, &[self], move |g, _| {
            let gd = g.data();
            let mut dx = vec![T::zero(); outer * n * inner];
            for o in 0..outer {
                for (j, &(i0, i1, lam)) in taps.iter().enumerate() {
                    let (a, bw) = (T::of_f64(1.0 - lam), T::of_f64(lam));
                    let src = &gd[(o * 2 * n + j) * inner..(o * 2 * n + j + 1) * inner];
                    for (k, &gv) in src.iter().enumerate() {
                        dx[(o * n + i0) * inner + k] += a * gv;
                        dx[(o * n + i1) * inner + k] += bw * gv;
                    }
                }
            }
            vec![Some(Tensor::from_vec(shape.clone(), dx))]
        })
    }

    /// Trilinear 2x upsampling of the three spatial axes of a rank-5 tensor.
    pub fn upsample_trilinear_2x(&self) -> Var<'t, T> {
        self.upsample_linear_2x(2).upsample_linear_2x(3).upsample_linear_2x(4)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn linear_taps_interior_weights() {
        let t = linear_taps(4);
        assert_eq!(t[0], (0, 1, 0.0));
        assert_eq!(t[1], (0, 1, 0.25));
        assert_eq!(t[2], (0, 1, 0.75));
        assert_eq!(t[7], (3, 3, 0.25));
    }

    #[test]
    fn upsample_preserves_constants() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full([1, 2, 2, 3, 2], 1.5));
        let y = x.upsample_trilinear_2x();
        assert_eq!(y.shape(), &[1, 2, 4, 6, 4]);
        assert!(y.value().data().iter().all(|&v| (v - 1.5).abs() < 1e-15));
    }
}
