//! Broadcasting between a full shape and a same-rank shape with unit axes.

use crate::real::Real;
use crate::tensor::{numel, Tensor};

/// True when `small` can be broadcast onto `full` (same rank, each axis equal or 1).
pub fn broadcastable(small: &[usize], full: &[usize]) -> bool {
    small.len() == full.len() && small.iter().zip(full).all(|(&s, &f)| s == f || s == 1)
}

/// Collapsed iteration plan: merged axis extents and the stride of the small
/// operand along each merged axis (0 for broadcast axes).
struct Plan {
    dims: Vec<usize>,
    small_strides: Vec<usize>,
}

fn plan(small: &[usize], full: &[usize]) -> Plan {
    assert!(broadcastable(small, full), "cannot broadcast {small:?} onto {full:?}");
    // (extent, is_broadcast) with size-1 axes of `full` dropped.
    let mut merged: Vec<(usize, bool)> = Vec::new();
    for (&s, &f) in small.iter().zip(full) {
        if f == 1 {
            continue;
        }
        let bc = s == 1;
        match merged.last_mut() {
            Some((ext, kind)) if *kind == bc => *ext *= f,
            _ => merged.push((f, bc)),
        }
    }
    if merged.is_empty() {
        merged.push((1, false));
    }
    let mut small_strides = vec![0; merged.len()];
    let mut stride = 1;
    for i in (0..merged.len()).rev() {
        let (ext, bc) = merged[i];
        if !bc {
            small_strides[i] = stride;
            stride *= ext;
        }
    }
    Plan { dims: merged.iter().map(|m| m.0).collect(), small_strides }
}

/// Calls `f(full_offset, small_offset, run_len, small_inner_stride)` for each
/// contiguous run of the innermost merged axis.
fn for_each_run(p: &Plan, mut f: impl FnMut(usize, usize, usize, usize)) {
    let r = p.dims.len();
    let inner = p.dims[r - 1];
    let inner_stride = p.small_strides[r - 1];
    let outer: usize = p.dims[..r - 1].iter().product();
    let mut idx = vec![0usize; r - 1];
    let mut full_off = 0;
    for _ in 0..outer {
        let small_off: usize = idx.iter().zip(&p.small_strides).map(|(&i, &s)| i * s).sum();
        f(full_off, small_off, inner, inner_stride);
        full_off += inner;
        for ax in (0..r - 1).rev() {
            idx[ax] += 1;
            if idx[ax] < p.dims[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}

/// Repeats `small` along its unit axes to fill `full`.
pub fn expand_to<T: Real>(small: &Tensor<T>, full: &[usize]) -> Tensor<T> {
    if small.shape() == full {
        return small.clone();
    }
    let p = plan(small.shape(), full);
    let src = small.data();
    let mut out = vec![T::zero(); numel(full)];
    for_each_run(&p, |fo, so, n, st| {
        let dst = &mut out[fo..fo + n];
        if st == 0 {
            dst.fill(src[so]);
        } else {
            dst.copy_from_slice(&src[so..so + n]);
        }
    });
    Tensor::from_vec(full.to_vec(), out)
}

/// Sums `full` over the axes where `small_shape` has extent 1.
pub fn reduce_to<T: Real>(full: &Tensor<T>, small_shape: &[usize]) -> Tensor<T> {
    if full.shape() == small_shape {
        return full.clone();
    }
    let p = plan(small_shape, full.shape());
    let src = full.data();
    let mut out = vec![T::zero(); numel(small_shape)];
    for_each_run(&p, |fo, so, n, st| {
        let s = &src[fo..fo + n];
        if st == 0 {
            out[so] += s.iter().copied().sum::<T>();
        } else {
            for (o, &v) in out[so..so + n].iter_mut().zip(s) {
                *o += v;
            }
        }
    });
    Tensor::from_vec(small_shape.to_vec(), out)
}

/// `out[i] = f(full[i], small[bcast(i)])`.
pub fn zip_broadcast<T: Real>(full: &Tensor<T>, small: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let p = plan(small.shape(), full.shape());
    let a = full.data();
    let b = small.data();
    let mut out = vec![T::zero(); a.len()];
    for_each_run(&p, |fo, so, n, st| {
        let dst = &mut out[fo..fo + n];
        let av = &a[fo..fo + n];
        if st == 0 {
            let bv = b[so];
            for (o, &x) in dst.iter_mut().zip(av) {
                *o = f(x, bv);
            }
        } else {
            for ((o, &x), &y) in dst.iter_mut().zip(av).zip(&b[so..so + n]) {
                *o = f(x, y);
            }
        }
    });
    Tensor::from_vec(full.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expand_then_reduce_scales_by_repeat_count() {
        let small = Tensor::<f64>::from_vec([1, 3, 1], vec![1.0, 2.0, 3.0]);
        let full = expand_to(&small, &[2, 3, 4]);
        assert_eq!(full.get(&[1, 2, 3]), 3.0);
        let back = reduce_to(&full, &[1, 3, 1]);
        assert_eq!(back.data(), &[8.0, 16.0, 24.0]);
    }

    #[test]
    fn zip_broadcast_channel_bias() {
        let x = Tensor::<f64>::from_fn([1, 2, 2, 1, 1], |i| i as f64);
        let b = Tensor::<f64>::from_vec([1, 2, 1, 1, 1], vec![10.0, 20.0]);
        let y = zip_broadcast(&x, &b, |a, c| a + c);
        assert_eq!(y.data(), &[10.0, 11.0, 22.0, 23.0]);
    }

    #[test]
    fn reduce_to_scalar_shape() {
        let x = Tensor::<f64>::from_fn([2, 3], |i| i as f64);
        assert_eq!(reduce_to(&x, &[1, 1]).data(), &[15.0]);
    }
}
