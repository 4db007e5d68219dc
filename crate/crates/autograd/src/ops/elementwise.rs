use std::rc::Rc;

use crate::broadcast::{broadcastable, expand_to, reduce_to, zip_broadcast};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

fn c<T: Real>(v: f64) -> T {
    T::of_f64(v)
}

impl<'t, T: Real> Var<'t, T> {
    /// Elementwise sum; either operand may broadcast along unit axes.
    pub fn add(&self, other: &Var<'t, T>) -> Var<'t, T> {
        let (a, b) = (self.shape(), other.shape());
        if a == b {
            let out = self.value().zip_map(other.value(), |x, y| x + y);
            return self.tape().op(out, &[self, other], |g, need| {
                vec![need[0].then(|| g.clone()), need[1].then(|| g.clone())]
            });
        }
        if broadcastable(b, a) {
            let out = zip_broadcast(self.value(), other.value(), |x, y| x + y);
            let bshape = b.to_vec();
            return self.tape().op(out, &[self, other], move |g, need| {
                vec![need[0].then(|| g.clone()), need[1].then(|| reduce_to(g, &bshape))]
            });
        }
        assert!(broadcastable(a, b), "add: incompatible shapes {a:?} and {b:?}");
        other.add(self)
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Var<'t, T> {
        self.add(&other.neg())
    }

    /// Elementwise product; either operand may broadcast along unit axes.
    pub fn mul(&self, other: &Var<'t, T>) -> Var<'t, T> {
        let (a, b) = (self.shape(), other.shape());
        if a == b {
            let out = self.value().zip_map(other.value(), |x, y| x * y);
            let (av, bv) = (self.value_rc(), other.value_rc());
            return self.tape().op(out, &[self, other], move |g, need| {
                vec![
                    need[0].then(|| g.zip_map(&bv, |g, y| g * y)),
                    need[1].then(|| g.zip_map(&av, |g, x| g * x)),
                ]
            });
        }
        if broadcastable(b, a) {
            let out = zip_broadcast(self.value(), other.value(), |x, y| x * y);
            let (av, bv) = (self.value_rc(), other.value_rc());
            return self.tape().op(out, &[self, other], move |g, need| {
                vec![
                    need[0].then(|| zip_broadcast(g, &bv, |g, y| g * y)),
                    need[1].then(|| reduce_to(&g.zip_map(&av, |g, x| g * x), bv.shape())),
                ]
            });
        }
        assert!(broadcastable(a, b), "mul: incompatible shapes {a:?} and {b:?}");
        other.mul(self)
    }

    /// Elementwise quotient with matching shapes.
    pub fn div(&self, other: &Var<'t, T>) -> Var<'t, T> {
        let out = self.value().zip_map(other.value(), |x, y| x / y);
        let (av, bv) = (self.value_rc(), other.value_rc());
        self.tape().op(out, &[self, other], move |g, need| {
            vec![
                need[0].then(|| g.zip_map(&bv, |g, y| g / y)),
                need[1].then(|| {
                    let t = g.zip_map(&av, |g, x| g * x);
                    t.zip_map(&bv, |t, y| -t / (y * y))
                }),
            ]
        })
    }

    pub fn neg(&self) -> Var<'t, T> {
        self.scale(-T::one())
    }

    pub fn scale(&self, s: T) -> Var<'t, T> {
        let out = self.value().scale(s);
        self.tape().op(out, &[self], move |g, _| vec![Some(g.scale(s))])
    }

    pub fn add_scalar(&self, s: T) -> Var<'t, T> {
        let out = self.value().map(|v| v + s);
        self.tape().op(out, &[self], |g, _| vec![Some(g.clone())])
    }

    /// Repeats along unit axes to `shape`.
    pub fn expand(&self, shape: &[usize]) -> Var<'t, T> {
        let out = expand_to(self.value(), shape);
        let small = self.shape().to_vec();
        self.tape().op(out, &[self], move |g, _| vec![Some(reduce_to(g, &small))])
    }

    fn unary_from_output(&self, out: Tensor<T>, dy: impl Fn(T) -> T + 'static) -> Var<'t, T> {
        let y = Rc::new(out.clone());
        self.tape().op(out, &[self], move |g, _| vec![Some(g.zip_map(&y, |g, y| g * dy(y)))])
    }

    fn unary_from_input(&self, out: Tensor<T>, dx: impl Fn(T) -> T + 'static) -> Var<'t, T> {
        let x = self.value_rc();
        self.tape().op(out, &[self], move |g, _| vec![Some(g.zip_map(&x, |g, x| g * dx(x)))])
    }

    pub fn relu(&self) -> Var<'t, T> {
        let out = self.value().map(|v| v.max(T::zero()));
        self.unary_from_output(out, |y| if y > T::zero() { T::one() } else { T::zero() })
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        let out = self.value().map(sigmoid);
        self.unary_from_output(out, |y| y * (T::one() - y))
    }

    pub fn tanh(&self) -> Var<'t, T> {
        let out = self.value().map(|v| v.tanh());
        self.unary_from_output(out, |y| T::one() - y * y)
    }

    pub fn exp(&self) -> Var<'t, T> {
        let out = self.value().map(|v| v.exp());
        self.unary_from_output(out, |y| y)
    }

    pub fn ln(&self) -> Var<'t, T> {
        let out = self.value().map(|v| v.ln());
        self.unary_from_input(out, |x| x.recip())
    }

    pub fn sqrt(&self) -> Var<'t, T> {
        let out = self.value().map(|v| v.sqrt());
        self.unary_from_output(out, |y| c::<T>(0.5) / y)
    }

    pub fn square(&self) -> Var<'t, T> {
        let out = self.value().map(|v| v * v);
        self.unary_from_input(out, |x| x + x)
    }

    /// `max(x, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&self, floor: T) -> Var<'t, T> {
        let out = self.value().map(|v| v.max(floor));
        self.unary_from_input(out, move |x| if x > floor { T::one() } else { T::zero() })
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&self) -> Var<'t, T> {
        let out = self.value().map(gelu);
        self.unary_from_input(out, gelu_grad)
    }
}

#[inline]
pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    c::<T>(0.5) * x * (T::one() + (x * c::<T>(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[inline]
fn gelu_grad<T: Real>(x: T) -> T {
    let cdf = c::<T>(0.5) * (T::one() + (x * c::<T>(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * c::<T>(0.5)).exp() * c::<T>(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}
