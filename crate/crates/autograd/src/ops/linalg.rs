use crate::ops::shape::split_at_axis;
use crate::real::{matmul_into, MatRef, Real};
use crate::tape::Var;
use crate::tensor::Tensor;

/// Batched `a[i] · op(b[i])` where `op` optionally transposes.
fn batched<T: Real>(a: &Tensor<T>, b: &Tensor<T>, trans_b: bool) -> Tensor<T> {
    let ra = a.rank();
    let rb = b.rank();
    assert!(ra >= 2 && rb >= 2);
    let (m, k) = (a.shape()[ra - 2], a.shape()[ra - 1]);
    let (kb, n) = if trans_b {
        (b.shape()[rb - 1], b.shape()[rb - 2])
    } else {
        (b.shape()[rb - 2], b.shape()[rb - 1])
    };
    assert_eq!(k, kb, "matmul inner dims: {:?} x {:?} (trans_b={trans_b})", a.shape(), b.shape());
    let mut out_shape = a.shape()[..ra - 2].to_vec();
    out_shape.push(m);
    out_shape.push(n);
    let batch: usize = a.shape()[..ra - 2].iter().product();
    let shared_b = rb == 2;
    if !shared_b {
        assert_eq!(a.shape()[..ra - 2], b.shape()[..rb - 2], "matmul batch dims differ");
    }
    let mut out = vec![T::zero(); batch * m * n];
    let bsz = b.shape()[rb - 2] * b.shape()[rb - 1];
    for i in 0..batch {
        let am = MatRef::row_major(&a.data()[i * m * k..(i + 1) * m * k], m, k);
        let bslice = if shared_b { b.data() } else { &b.data()[i * bsz..(i + 1) * bsz] };
        let bm = if trans_b { MatRef::row_major(bslice, n, k).t() } else { MatRef::row_major(bslice, k, n) };
        matmul_into(am, bm, &mut out[i * m * n..(i + 1) * m * n], n, T::zero());
    }
    Tensor::from_vec(out_shape, out)
}

/// Batched `a[i]^T · g[i]`, summed over the batch when `reduce` (shared right operand).
fn batched_at_b<T: Real>(a: &Tensor<T>, g: &Tensor<T>, reduce: bool) -> Vec<T> {
    let ra = a.rank();
    let (m, k) = (a.shape()[ra - 2], a.shape()[ra - 1]);
    let n = g.shape()[g.rank() - 1];
    let batch: usize = a.shape()[..ra - 2].iter().product();
    let mut out = vec![T::zero(); if reduce { k * n } else { batch * k * n }];
    for i in 0..batch {
        let am = MatRef::row_major(&a.data()[i * m * k..(i + 1) * m * k], m, k).t();
        let gm = MatRef::row_major(&g.data()[i * m * n..(i + 1) * m * n], m, n);
        if reduce {
            matmul_into(am, gm, &mut out, n, T::one());
        } else {
            matmul_into(am, gm, &mut out[i * k * n..(i + 1) * k * n], n, T::zero());
        }
    }
    out
}

/// Batched `g[i]^T · a[i]` (gradient of the transposed right operand).
fn batched_gt_a<T: Real>(g: &Tensor<T>, a: &Tensor<T>, reduce: bool) -> Vec<T> {
    let rg = g.rank();
    let (m, n) = (g.shape()[rg - 2], g.shape()[rg - 1]);
    let k = a.shape()[a.rank() - 1];
    let batch: usize = g.shape()[..rg - 2].iter().product();
    let mut out = vec![T::zero(); if reduce { n * k } else { batch * n * k }];
    for i in 0..batch {
        let gm = MatRef::row_major(&g.data()[i * m * n..(i + 1) * m * n], m, n).t();
        let am = MatRef::row_major(&a.data()[i * m * k..(i + 1) * m * k], m, k);
        if reduce {
            matmul_into(gm, am, &mut out, k, T::one());
        } else {
            matmul_into(gm, am, &mut out[i * n * k..(i + 1) * n * k], k, T::zero());
        }
    }
    out
}

impl<'t, T: Real> Var<'t, T> {
    /// `self · other` over the last two axes. `other` is either batched with
    /// identical leading axes or a shared rank-2 matrix.
    pub fn matmul(&self, other: &Var<'t, T>) -> Var<'t, T> {
        self.matmul_impl(other, false)
    }

    /// `self · otherᵀ` over the last two axes.
    pub fn matmul_t(&self, other: &Var<'t, T>) -> Var<'t, T> {
        self.matmul_impl(other, true)
    }

    fn matmul_impl(&self, other: &Var<'t, T>, trans_b: bool) -> Var<'t, T> {
        let out = batched(self.value(), other.value(), trans_b);
        let (av, bv) = (self.value_rc(), other.value_rc());
        let shared = bv.rank() == 2;
        self.tape().op(out, &[self, other], move |g, need| {
            let ga = need[0].then(|| {
                // dA = G · op(B)ᵀ
                let t = batched(g, &bv, !trans_b);
                Tensor::from_vec(av.shape().to_vec(), t.into_data())
            });
            let gb = need[1].then(|| {
                let data = if trans_b { batched_gt_a(g, &av, shared) } else { batched_at_b(&av, g, shared) };
                Tensor::from_vec(bv.shape().to_vec(), data)
            });
            vec![ga, gb]
        })
    }

    /// Softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Var<'t, T> {
        let shape = self.shape().to_vec();
        let (outer, n, inner) = split_at_axis(&shape, axis);
        let x = self.value().data();
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut mx = T::neg_infinity();
                for j in 0..n {
                    mx = mx.max(x[base + j * inner]);
                }
                let mut s = T::zero();
                for j in 0..n {
                    let e = (x[base + j * inner] - mx).exp();
                    y[base + j * inner] = e;
                    s += e;
                }
                let inv = s.recip();
                for j in 0..n {
                    y[base + j * inner] *= inv;
                }
            }
        }
        let out = Tensor::from_vec(shape.clone(), y);
        let yv = out.clone();
        self.tape().op(out, &[self], move |g, _| {
            let (gd, yd) = (g.data(), yv.data());
            let mut dx = vec![T::zero(); gd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * n * inner + i;
                    let mut dot = T::zero();
                    for j in 0..n {
                        dot += gd[base + j * inner] * yd[base + j * inner];
                    }
                    for j in 0..n {
                        let p = base + j * inner;
                        dx[p] = yd[p] * (gd[p] - dot);
                    }
                }
            }
            vec![Some(Tensor::from_vec(shape.clone(), dx))]
        })
    }
}
