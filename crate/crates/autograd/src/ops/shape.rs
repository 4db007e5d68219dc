use std::rc::Rc;

use crate::broadcast::{expand_to, reduce_to};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `(outer, axis, inner)` extents around `axis`.
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'t, T: Real> Var<'t, T> {
    pub fn reshape(&self, shape: &[usize]) -> Var<'t, T> {
        let out = self.value().clone().reshape(shape.to_vec());
        let orig = self.shape().to_vec();
        self.tape().op(out, &[self], move |g, _| vec![Some(g.clone().reshape(orig.clone()))])
    }

    pub fn permute(&self, axes: &[usize]) -> Var<'t, T> {
        let out = self.value().permute(axes);
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        self.tape().op(out, &[self], move |g, _| vec![Some(g.permute(&inverse))])
    }

    /// Contiguous sub-range `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var<'t, T> {
        let shape = self.shape().to_vec();
        assert!(start + len <= shape[axis], "narrow out of range");
        let (outer, n, inner) = split_at_axis(&shape, axis);
        let src = self.value().data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let out = Tensor::from_vec(out_shape, out);
        self.tape().op(out, &[self], move |g, _| {
            let mut full = vec![T::zero(); outer * n * inner];
            let gd = g.data();
            for o in 0..outer {
                let base = (o * n + start) * inner;
                full[base..base + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(Tensor::from_vec(shape.clone(), full))]
        })
    }

    /// Flat gather: `out[i] = self[indices[i]]`, shaped as `out_shape`.
    pub fn gather(&self, indices: Rc<Vec<usize>>, out_shape: &[usize]) -> Var<'t, T> {
        let src = self.value().data();
        let out = Tensor::from_vec(out_shape.to_vec(), indices.iter().map(|&i| src[i]).collect());
        let in_shape = self.shape().to_vec();
        self.tape().op(out, &[self], move |g, _| {
            let mut acc = Tensor::zeros(in_shape.clone());
            let a = acc.data_mut();
            for (&i, &v) in indices.iter().zip(g.data()) {
                a[i] += v;
            }
            vec![Some(acc)]
        })
    }

    pub fn sum_all(&self) -> Var<'t, T> {
        let out = Tensor::scalar(self.value().sum());
        let shape = self.shape().to_vec();
        self.tape().op(out, &[self], move |g, _| vec![Some(Tensor::full(shape.clone(), g.data()[0]))])
    }

    pub fn mean_all(&self) -> Var<'t, T> {
        let n = T::of_usize(self.value().numel());
        self.sum_all().scale(T::one() / n)
    }

    /// Sum over `axes`, keeping them as unit axes.
    pub fn sum_axes(&self, axes: &[usize]) -> Var<'t, T> {
        let mut small = self.shape().to_vec();
        for &a in axes {
            small[a] = 1;
        }
        let out = reduce_to(self.value(), &small);
        let full = self.shape().to_vec();
        self.tape().op(out, &[self], move |g, _| vec![Some(expand_to(g, &full))])
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Var<'t, T> {
        let n: usize = axes.iter().map(|&a| self.shape()[a]).product();
        self.sum_axes(axes).scale(T::one() / T::of_usize(n))
    }
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat<'t, T: Real>(tape: &'t Tape<T>, parts: &[&Var<'t, T>], axis: usize) -> Var<'t, T> {
    assert!(!parts.is_empty(), "concat of nothing");
    let first = parts[0].shape().to_vec();
    for p in parts {
        let s = p.shape();
        assert_eq!(s.len(), first.len(), "concat rank mismatch");
        for (i, (&a, &b)) in s.iter().zip(&first).enumerate() {
            assert!(i == axis || a == b, "concat extent mismatch on axis {i}: {s:?} vs {first:?}");
        }
    }
    let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    let total: usize = sizes.iter().sum();
    let (outer, _, inner) = split_at_axis(&first, axis);
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (p, &n) in parts.iter().zip(&sizes) {
            let src = p.value().data();
            data.extend_from_slice(&src[o * n * inner..(o + 1) * n * inner]);
        }
    }
    let mut out_shape = first.clone();
    out_shape[axis] = total;
    let out = Tensor::from_vec(out_shape, data);
    let shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape().to_vec()).collect();
    tape.op(out, parts, move |g, need| {
        let gd = g.data();
        let mut offset = 0;
        let mut grads = Vec::with_capacity(sizes.len());
        for (k, &n) in sizes.iter().enumerate() {
            if need[k] {
                let mut buf = Vec::with_capacity(outer * n * inner);
                for o in 0..outer {
                    let base = (o * total + offset) * inner;
                    buf.extend_from_slice(&gd[base..base + n * inner]);
                }
                grads.push(Some(Tensor::from_vec(shapes[k].clone(), buf)));
            } else {
                grads.push(None);
            }
            offset += n;
        }
        grads
    })
}
