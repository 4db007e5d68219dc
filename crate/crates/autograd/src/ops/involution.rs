use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Offsets of a cubic `k³` neighborhood centered on the voxel, in kernel order.
fn offsets(k: usize) -> Vec<[isize; 3]> {
    let r = (k / 2) as isize;
    let mut v = Vec::with_capacity(k * k * k);
    for a in -r..=r {
        for b in -r..=r {
            for c in -r..=r {
                v.push([a, b, c]);
            }
        }
    }
    v
}

/// Visits every in-bounds `(kernel tap, output voxel, source voxel)` triple.
fn for_each_tap(dims: [usize; 3], k: usize, mut f: impl FnMut(usize, usize, usize)) {
    let [d, h, w] = dims;
    for (t, o) in offsets(k).into_iter().enumerate() {
        for z in 0..d {
            let sz = z as isize + o[0];
            if sz < 0 || sz >= d as isize {
                continue;
            }
            for y in 0..h {
                let sy = y as isize + o[1];
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let row = (z * h + y) * w;
                let srow = (sz as usize * h + sy as usize) * w;
                let x0 = (-o[2]).max(0) as usize;
                let x1 = (w as isize - o[2].max(0)).max(0) as usize;
                for x in x0..x1 {
                    f(t, row + x, (srow as isize + x as isize + o[2]) as usize);
                }
            }
        }
    }
}

impl<'t, T: Real> Var<'t, T> {
    /// Applies per-voxel kernels `(B, G·k³, D, H, W)` to `self` `(B, C, D, H, W)`;
    /// channel `c` uses the kernel of group `c / (C / G)`. Zero padding.
    pub fn involution_apply(&self, kernels: &Var<'t, T>, k: usize) -> Var<'t, T> {
        assert!(k % 2 == 1, "involution kernel must be odd");
        let (b, c, d, h, w) = self.dims5();
        let kk = k * k * k;
        let (kb, kc, kd, kh, kw) = kernels.dims5();
        assert_eq!((kb, kd, kh, kw), (b, d, h, w), "involution kernel grid");
        assert!(kc % kk == 0, "kernel channels must be a multiple of k³");
        let groups = kc / kk;
        assert!(c % groups == 0, "channels {c} not divisible by {groups} groups");
        let per = c / groups;
        let vol = d * h * w;
        let dims = [d, h, w];
        let x = self.value().data();
        let ker = kernels.value().data();
        let mut out = vec![T::zero(); x.len()];
        for bi in 0..b {
            for ch in 0..c {
                let gi = ch / per;
                let xs = &x[(bi * c + ch) * vol..][..vol];
                let ks = &ker[(bi * kc + gi * kk) * vol..][..kk * vol];
                let os = &mut out[(bi * c + ch) * vol..][..vol];
                for_each_tap(dims, k, |t, o, s| os[o] += ks[t * vol + o] * xs[s]);
            }
        }
        let (xv, kv) = (self.value_rc(), kernels.value_rc());
        let (xshape, kshape) = (self.shape().to_vec(), kernels.shape().to_vec());
        let out = Tensor::from_vec(xshape.clone(), out);
        self.tape().op(out, &[self, kernels], move |g, need| {
            let gd = g.data();
            let (x, ker) = (xv.data(), kv.data());
            let mut dx = need[0].then(|| vec![T::zero(); x.len()]);
            let mut dk = need[1].then(|| vec![T::zero(); ker.len()]);
            for bi in 0..b {
                for ch in 0..c {
                    let gi = ch / per;
                    let base = (bi * c + ch) * vol;
                    let kbase = (bi * kc + gi * kk) * vol;
                    let gs = &gd[base..base + vol];
                    if let Some(dx) = dx.as_mut() {
                        let ks = &ker[kbase..kbase + kk * vol];
                        let dxs = &mut dx[base..base + vol];
                        for_each_tap(dims, k, |t, o, s| dxs[s] += ks[t * vol + o] * gs[o]);
                    }
                    if let Some(dk) = dk.as_mut() {
                        let xs = &x[base..base + vol];
                        let dks = &mut dk[kbase..kbase + kk * vol];
                        for_each_tap(dims, k, |t, o, s| dks[t * vol + o] += gs[o] * xs[s]);
                    }
                }
            }
            vec![
                dx.map(|v| Tensor::from_vec(xshape.clone(), v)),
                dk.map(|v| Tensor::from_vec(kshape.clone(), v)),
            ]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;
    use rand::SeedableRng;

    #[test]
    fn centered_delta_kernel_is_identity() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(9);
        let tape = Tape::<f64>::new();
        let x = Tensor::randn([2, 4, 3, 4, 5], 1.0, &mut rng);
        let mut k = Tensor::zeros([2, 27, 3, 4, 5]);
        let vol = 60;
        for bi in 0..2 {
            for v in 0..vol {
                k.data_mut()[(bi * 27 + 13) * vol + v] = 1.0;
            }
        }
        let y = tape.constant(x.clone()).involution_apply(&tape.constant(k), 3);
        assert_eq!(y.value(), &x);
    }
}
