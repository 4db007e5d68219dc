use std::collections::BTreeSet;
use std::rc::Rc;

use neurovasc_autograd::{Conv3dOpts, Real, Tensor, Var};
use rand::Rng;

use super::layers::join;
use crate::params::{Ctx, ParamStore};

/// Distinct squared radii of the offsets in a cubic `size³` support, ascending.
pub fn distinct_squared_radii(size: usize) -> Vec<usize> {
    let r = (size / 2) as isize;
    let mut set = BTreeSet::new();
    for a in -r..=r {
        for b in -r..=r {
            for c in -r..=r {
                set.insert((a * a + b * b + c * c) as usize);
            }
        }
    }
    set.into_iter().collect()
}

/// Convolution whose kernel depends only on the offset radius.
#[derive(Clone, Debug)]
pub struct SphericalConv3d {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub size: usize,
    /// Radius index of every tap, in `(z, y, x)` order.
    tap_radius: Vec<usize>,
    n_radii: usize,
}

impl SphericalConv3d {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, size: usize) -> Self {
        assert!(size % 2 == 1, "spherical kernel must be odd");
        let radii = distinct_squared_radii(size);
        let r = (size / 2) as isize;
        let mut tap_radius = Vec::with_capacity(size.pow(3));
        for a in -r..=r {
            for b in -r..=r {
                for c in -r..=r {
                    let q = (a * a + b * b + c * c) as usize;
                    tap_radius.push(radii.binary_search(&q).expect("radius enumerated above"));
                }
            }
        }
        Self { name: name.into(), cin, cout, size, tap_radius, n_radii: radii.len() }
    }

    pub fn radial_weights_per_pair(&self) -> usize {
        self.n_radii
    }

    pub fn num_params(&self) -> usize {
        self.cout * self.cin * self.n_radii + self.cout
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        let fan_in = self.cin * self.size.pow(3);
        let std = (1.0 / fan_in as f64).sqrt();
        store.learnable(join(&self.name, "radial"), Tensor::randn([self.cout, self.cin, self.n_radii], std, rng));
        store.learnable(join(&self.name, "bias"), Tensor::zeros([self.cout]));
    }

    /// Radial weights expanded to a full `(C_out, C_in, k, k, k)` kernel.
    pub fn kernel<'t, T: Real>(&self, ctx: &Ctx<'t, T>) -> Var<'t, T> {
        let taps = self.tap_radius.len();
        let mut idx = Vec::with_capacity(self.cout * self.cin * taps);
        for pair in 0..self.cout * self.cin {
            idx.extend(self.tap_radius.iter().map(|&r| pair * self.n_radii + r));
        }
        let k = self.size;
        ctx.param(&join(&self.name, "radial")).gather(Rc::new(idx), &[self.cout, self.cin, k, k, k])
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Var<'t, T> {
        let b = ctx.param(&join(&self.name, "bias"));
        x.conv3d(&self.kernel(ctx), Some(&b), Conv3dOpts::same([self.size; 3], [1; 3]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radii_of_five_cube() {
        assert_eq!(distinct_squared_radii(5), vec![0, 1, 2, 3, 4, 5, 6, 8, 9, 12]);
        assert_eq!(distinct_squared_radii(3), vec![0, 1, 2, 3]);
    }
}
