//! Central finite-difference verification of analytic gradients.

use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    /// Finite-difference step.
    pub eps: f64,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
    /// Check at most this many randomly chosen entries per input.
    pub max_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { eps: 1e-5, floor: 1e-4, max_per_input: None, seed: 0 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    /// `(input, flat index)` of the worst relative error.
    pub worst: Option<(usize, usize)>,
}

impl GradcheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err < tol && self.max_rel_err.is_finite()
    }
}

/// Compares the tape gradient of `f` against central differences.
///
/// A non-scalar output is contracted with a fixed random tensor so every
/// output entry contributes. The per-entry relative error is
/// `|a - n| / max(|a|, |n|, floor)`.
pub fn gradcheck<F>(inputs: &[Tensor<f64>], opts: &GradcheckOptions, f: F) -> GradcheckReport
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Var<'t, f64>,
{
    let mut rng = StdRng::seed_from_u64(opts.seed);
    let mut projection: Option<Tensor<f64>> = None;

    let mut eval = |values: &[Tensor<f64>], tracked: bool| -> (f64, Vec<Tensor<f64>>) {
        let tape = if tracked { Tape::new() } else { Tape::no_grad() };
        let vars: Vec<_> = values.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = f(&tape, &vars);
        let proj = projection
            .get_or_insert_with(|| Tensor::uniform(out.shape().to_vec(), -1.0, 1.0, &mut StdRng::seed_from_u64(opts.seed ^ 0x5eed)))
            .clone();
        assert_eq!(proj.shape(), out.shape(), "output shape changed between evaluations");
        let loss = out.mul(&tape.constant(proj)).sum_all();
        let value = loss.value().data()[0];
        let grads = if tracked {
            let g = tape.backward(&loss);
            vars.iter().map(|v| g.get_or_zeros(v)).collect()
        } else {
            Vec::new()
        };
        (value, grads)
    };

    let (_, analytic) = eval(inputs, true);
    let mut report = GradcheckReport::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let picks: Vec<usize> = match opts.max_per_input {
            Some(m) if m < n => rand::seq::index::sample(&mut rng, n, m).into_vec(),
            _ => (0..n).collect(),
        };
        for j in picks {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + opts.eps;
            let (fp, _) = eval(&work, false);
            work[i].data_mut()[j] = orig - opts.eps;
            let (fm, _) = eval(&work, false);
            work[i].data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * opts.eps);
            let a = analytic[i].data()[j];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(abs);
            if rel > report.max_rel_err || rel.is_nan() {
                report.max_rel_err = rel;
                report.worst = Some((i, j));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_wrong_gradient() {
        let x = Tensor::from_vec([3], vec![0.3, -0.2, 0.9]);
        let ok = gradcheck(&[x.clone()], &GradcheckOptions::default(), |_, v| v[0].square());
        assert!(ok.passed(1e-6), "{ok:?}");
        // detach hides the gradient of the second factor
        let bad = gradcheck(&[x], &GradcheckOptions::default(), |_, v| v[0].mul(&v[0].detach()));
        assert!(!bad.passed(1e-2), "{bad:?}");
    }
}
