//! Finite-difference gradient suites for blocks, fusion modules, the loss and
//! a scaled-down network, all in double precision.

use std::collections::HashMap;
use std::time::Instant;

use neurovasc_autograd::{gradcheck, GradcheckOptions, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::{
    Aspp, AttentionGate, BlockConfig, ConvNeXt3d, Conv3d, DilatedBlock, Eca, GatedAxial, Involution3d, SpectralMask, SphericalConv3d,
};
use crate::fusion::{Cda2f, Cda2fConfig, Msc2f, Msc2fConfig};
use crate::loss::{hybrid_loss_from_logits, one_hot, LossConfig};
use crate::network::{ModelConfig, Network};
use crate::params::{Ctx, Kind, ParamStore};
use crate::{Error, Result};

/// Tolerance for blocks, modules and the loss.
pub const BLOCK_TOLERANCE: f64 = 1e-4;
/// Tolerance for the end-to-end network spot check.
pub const NETWORK_TOLERANCE: f64 = 1e-3;
/// Central-difference step for block and module checks.
pub const FD_STEP: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Block,
    Module,
    Network,
}

impl std::str::FromStr for Scope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "block" => Ok(Self::Block),
            "module" => Ok(Self::Module),
            "network" => Ok(Self::Network),
            other => Err(Error::InvalidConfig(format!("unknown gradcheck scope {other:?} (expected block, module or network)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub scope: Scope,
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
    pub seconds: f64,
}

/// A parameterized function under test.
struct Case<'a> {
    name: &'a str,
    store: ParamStore<f64>,
    inputs: Vec<Tensor<f64>>,
    training: bool,
    /// Entries sampled per input or parameter; `None` checks all.
    per_tensor: Option<usize>,
}

fn run_case<F>(scope: Scope, tol: f64, case: Case<'_>, f: F) -> CheckRow
where
    F: for<'t, 'c> Fn(&'c Ctx<'t, f64>, &[Var<'t, f64>]) -> Var<'t, f64>,
{
    let start = Instant::now();
    let paths = case.store.learnable_paths();
    let buffers: HashMap<String, Tensor<f64>> =
        case.store.iter().filter(|(_, e)| e.kind == Kind::Buffer).map(|(k, e)| (k.to_string(), e.value.clone())).collect();
    let n_in = case.inputs.len();
    let mut all = case.inputs.clone();
    all.extend(paths.iter().map(|p| case.store.get(p).expect("listed path").clone()));
    let opts = GradcheckOptions { max_per_input: case.per_tensor, seed: 17, eps: FD_STEP, ..Default::default() };
    let training = case.training;
    let report = gradcheck(&all, &opts, |tape, vars| {
        let params = paths.iter().cloned().zip(vars[n_in..].iter().cloned()).collect();
        let ctx = Ctx::from_parts(tape, params, buffers.clone(), training, 5);
        f(&ctx, &vars[..n_in])
    });
    CheckRow {
        scope,
        name: case.name.to_string(),
        max_rel_err: report.max_rel_err,
        checked: report.checked,
        tolerance: tol,
        passed: report.passed(tol),
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn input(shape: [usize; 5], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape.to_vec(), 1.0, &mut rng(seed))
}

/// Parameters of a freshly initialized module, with small random offsets on
/// entries that start constant so every path carries signal.
fn perturbed(mut store: ParamStore<f64>, seed: u64) -> ParamStore<f64> {
    let mut r = rng(seed);
    for p in store.learnable_paths() {
        let t = store.get_mut(&p).expect("listed path");
        for v in t.data_mut() {
            *v += 0.1 * r.random_range(-1.0..1.0);
        }
    }
    store
}

fn store_of(init: impl FnOnce(&mut ParamStore<f64>, &mut ChaCha8Rng)) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    init(&mut s, &mut rng(3));
    perturbed(s, 4)
}

const SMALL: [usize; 5] = [1, 4, 6, 6, 6];
const PER_TENSOR: Option<usize> = Some(48);

fn block_rows() -> Vec<CheckRow> {
    let tol = BLOCK_TOLERANCE;
    let sc = Scope::Block;
    let mut rows = Vec::new();
    let case = |name, store, inputs: Vec<Tensor<f64>>, training| Case { name, store, inputs, training, per_tensor: PER_TENSOR };

    let block = DilatedBlock::new("b", BlockConfig::new(4, 4).with_dilation(2));
    rows.push(run_case(sc, tol, case("dilated block", store_of(|s, r| block.init(s, r)), vec![input(SMALL, 1)], true), |c, x| {
        block.forward(c, &x[0]).expect("valid shape")
    }));

    let gate = AttentionGate::new("g", 4, 8);
    rows.push(run_case(
        sc,
        tol,
        case("attention gate", store_of(|s, r| gate.init(s, r)), vec![input(SMALL, 2), input([1, 8, 3, 3, 3], 3)], false),
        |c, x| gate.forward(c, &x[0], &x[1]).expect("valid shape"),
    ));

    let aspp = Aspp::new("a", 4, &crate::blocks::aspp::DEFAULT_RATES);
    rows.push(run_case(sc, tol, case("aspp", store_of(|s, r| aspp.init(s, r)), vec![input(SMALL, 4)], false), |c, x| {
        aspp.forward(c, &x[0])
    }));

    let mask = SpectralMask::new("m", [3, 3, 3]);
    rows.push(run_case(sc, tol, case("fsa mask", store_of(|s, _| mask.init(s)), vec![input(SMALL, 5)], false), |c, x| {
        mask.forward(c, &x[0])
    }));

    let eca = Eca::new("e", 3);
    rows.push(run_case(sc, tol, case("eca", store_of(|s, r| eca.init(s, r)), vec![input(SMALL, 6)], false), |c, x| {
        eca.forward(c, &x[0])
    }));

    let dw = Conv3d::depthwise("dw", 4, [3, 3, 3]);
    rows.push(run_case(sc, tol, case("depthwise conv", store_of(|s, r| dw.init(s, r)), vec![input(SMALL, 7)], false), |c, x| {
        dw.forward(c, &x[0])
    }));

    let inv = Involution3d::new("i", 4, 3, 1, 4).expect("valid involution");
    rows.push(run_case(sc, tol, case("involution", store_of(|s, r| inv.init(s, r)), vec![input(SMALL, 8)], false), |c, x| {
        inv.forward(c, &x[0])
    }));

    let sph = SphericalConv3d::new("s", 4, 4, 5);
    rows.push(run_case(sc, tol, case("spherical conv", store_of(|s, r| sph.init(s, r)), vec![input(SMALL, 9)], false), |c, x| {
        sph.forward(c, &x[0])
    }));

    let cnx = ConvNeXt3d::new("c", 4);
    rows.push(run_case(sc, tol, case("convnext", store_of(|s, r| cnx.init(s, r)), vec![input(SMALL, 10)], false), |c, x| {
        cnx.forward(c, &x[0])
    }));

    let ax = GatedAxial::new("x", 4, 2).expect("valid heads");
    rows.push(run_case(sc, tol, case("gated axial attention", store_of(|s, r| ax.init(s, r)), vec![input(SMALL, 11)], false), |c, x| {
        ax.forward(c, &x[0])
    }));
    rows
}

fn module_rows() -> Vec<CheckRow> {
    let tol = BLOCK_TOLERANCE;
    let sc = Scope::Module;
    let mut rows = Vec::new();

    let msc = Msc2f::new("msc", Msc2fConfig::new(4, [3, 3, 3])).expect("valid config");
    let store = store_of(|s, r| msc.init(s, r));
    rows.push(run_case(sc, tol, Case { name: "msc2f", store, inputs: vec![input(SMALL, 12)], training: false, per_tensor: PER_TENSOR }, |c, x| {
        msc.forward(c, &x[0]).expect("valid shape")
    }));

    let cda = Cda2f::new("cda", Cda2fConfig::new(4, [3, 3, 3])).expect("valid config");
    let store = store_of(|s, r| cda.init(s, r));
    // training mode so the stochastic-depth path is the one differentiated
    rows.push(run_case(sc, tol, Case { name: "cda2f", store, inputs: vec![input(SMALL, 13)], training: true, per_tensor: PER_TENSOR }, |c, x| {
        cda.forward(c, &x[0]).expect("valid shape")
    }));

    let mut r = rng(14);
    let labels: Vec<u8> = (0..64).map(|_| r.random_range(0..3)).collect();
    let target = one_hot::<f64>(&labels, 1, 3, [4, 4, 4]);
    let loss = LossConfig::default().with_weights(vec![1.0, 8.5744, 14.007]);
    let logits = Tensor::randn(vec![1, 3, 4, 4, 4], 1.5, &mut r);
    rows.push(run_case(
        sc,
        tol,
        Case { name: "hybrid loss", store: ParamStore::new(), inputs: vec![logits], training: false, per_tensor: None },
        |_, x| hybrid_loss_from_logits(&x[0], &target, &loss).total,
    ));
    rows
}

/// Scaled-down network used by the end-to-end check.
pub fn spot_check_config() -> ModelConfig {
    let mut cfg = ModelConfig::with_shape([2, 4, 6, 8, 12], [16, 16, 16]);
    cfg.cda2f.heads = 2;
    cfg
}

fn network_rows(params_checked: usize) -> Vec<CheckRow> {
    let cfg = spot_check_config();
    let net = Network::new(cfg).expect("valid config");
    let store = perturbed(net.init::<f64>(21), 22);
    let start = Instant::now();
    let x = input([1, 1, 16, 16, 16], 23);
    let paths = store.learnable_paths();
    let buffers: HashMap<String, Tensor<f64>> =
        store.iter().filter(|(_, e)| e.kind == Kind::Buffer).map(|(k, e)| (k.to_string(), e.value.clone())).collect();
    // one scalar per chosen parameter tensor entry, drawn uniformly over all scalars
    let sizes: Vec<usize> = paths.iter().map(|p| store.get(p).expect("listed").numel()).collect();
    let total: usize = sizes.iter().sum();
    let mut r = rng(24);
    let mut picks: Vec<(usize, usize)> = Vec::new();
    for k in rand::seq::index::sample(&mut r, total, params_checked).into_iter() {
        let mut k = k;
        let mut t = 0;
        while k >= sizes[t] {
            k -= sizes[t];
            t += 1;
        }
        picks.push((t, k));
    }
    let eval = |store: &ParamStore<f64>, tracked: bool| -> (f64, Option<HashMap<String, Tensor<f64>>>) {
        let tape = if tracked { Tape::new() } else { Tape::no_grad() };
        let vars: HashMap<String, Var<'_, f64>> = paths.iter().map(|p| (p.clone(), tape.leaf(store.get(p).expect("listed").clone()))).collect();
        let ctx = Ctx::from_parts(&tape, vars.clone(), buffers.clone(), false, 5);
        let out = net.forward(&ctx, &tape.constant(x.clone())).expect("valid input");
        let proj = Tensor::uniform(out.shape().to_vec(), -1.0, 1.0, &mut rng(25));
        let loss = out.mul(&tape.constant(proj)).sum_all();
        let value = loss.value().data()[0];
        let grads = tracked.then(|| {
            let g = tape.backward(&loss);
            vars.iter().map(|(k, v)| (k.clone(), g.get_or_zeros(v))).collect()
        });
        (value, grads)
    };
    let (_, grads) = eval(&store, true);
    let grads = grads.expect("tracked pass");
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    let mut work = store.clone();
    for &(t, k) in &picks {
        let p = &paths[t];
        let orig = store.get(p).expect("listed").data()[k];
        work.get_mut(p).expect("listed").data_mut()[k] = orig + eps;
        let (fp, _) = eval(&work, false);
        work.get_mut(p).expect("listed").data_mut()[k] = orig - eps;
        let (fm, _) = eval(&work, false);
        work.get_mut(p).expect("listed").data_mut()[k] = orig;
        let numeric = (fp - fm) / (2.0 * eps);
        let analytic = grads[p].data()[k];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4);
        worst = if rel.is_nan() { f64::INFINITY } else { worst.max(rel) };
    }
    vec![CheckRow {
        scope: Scope::Network,
        name: "network spot check".into(),
        max_rel_err: worst,
        checked: picks.len(),
        tolerance: NETWORK_TOLERANCE,
        passed: worst < NETWORK_TOLERANCE,
        seconds: start.elapsed().as_secs_f64(),
    }]
}

/// Runs every check of a scope.
pub fn run_scope(scope: Scope) -> Vec<CheckRow> {
    match scope {
        Scope::Block => block_rows(),
        Scope::Module => module_rows(),
        Scope::Network => network_rows(24),
    }
}

/// Fixed-width table of results.
pub fn format_table(rows: &[CheckRow]) -> String {
    let mut s = format!("{:<8} {:<24} {:>12} {:>8} {:>10} {:>6}\n", "scope", "check", "max rel err", "entries", "tolerance", "result");
    for r in rows {
        let scope = serde_json::to_value(r.scope).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        s.push_str(&format!(
            "{:<8} {:<24} {:>12.3e} {:>8} {:>10.0e} {:>6}\n",
            scope,
            r.name,
            r.max_rel_err,
            r.checked,
            r.tolerance,
            if r.passed { "pass" } else { "FAIL" }
        ));
    }
    s
}
