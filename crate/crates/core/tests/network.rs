mod common;

use std::f64::consts::PI;

use common::assert_valid;
use common::oracles::{analytic_total, octahedral_rotations, rotate};
use neurovasc::blocks::spherical::distinct_squared_radii;
use neurovasc::blocks::{LogKernel, SpectralMask, SphericalConv3d};
use neurovasc::network::{Model, ModelConfig, Network};
use neurovasc::params::{Ctx, ParamStore};
use neurovasc_autograd::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const REFERENCE_TOTAL: f64 = 12_429_814.0;

#[test]
fn tiny_count_matches_the_analytic_enumeration() {
    let cfg = ModelConfig::tiny();
    let net = Network::new(cfg.clone()).unwrap();
    assert_eq!(net.num_params(), analytic_total(cfg.channels, cfg.input_shape, cfg.num_classes));
    assert_eq!(net.num_params(), 3_179_554);
    let store: ParamStore<f32> = net.init(0);
    assert_eq!(store.num_learnable(), net.num_params());
}

#[test]
fn default_count_is_near_the_reference() {
    let cfg = ModelConfig::default();
    let net = Network::new(cfg.clone()).unwrap();
    let n = net.num_params();
    assert_eq!(n, analytic_total(cfg.channels, cfg.input_shape, cfg.num_classes));
    let rel = (n as f64 - REFERENCE_TOTAL) / REFERENCE_TOTAL;
    assert!(rel.abs() <= 0.20, "{n} ({:+.2}%)", 100.0 * rel);
}

#[test]
fn breakdown_sums_and_validates() {
    let s = Network::new(ModelConfig::tiny()).unwrap().summary();
    assert_eq!(s.breakdown.iter().map(|m| m.params).sum::<usize>(), s.parameter_count);
    assert_eq!(s.breakdown.first().unwrap().module, "enc1.block");
    assert_eq!(s.breakdown.last().unwrap().module, "head");
    assert_valid("network_summary", &serde_json::to_value(&s).unwrap());
}

#[test]
fn forward_shape_holds_under_every_toggle() {
    let x = Tensor::<f32>::from_fn([1, 1, 16, 16, 16], |i| ((i * 37) % 101) as f32 / 101.0);
    let full = Network::new(ModelConfig::tiny()).unwrap().num_params();
    for (msc, cda, gates) in [(true, true, true), (false, true, true), (true, false, true), (true, true, false), (false, false, false)] {
        let mut cfg = ModelConfig::tiny();
        cfg.use_msc2f = msc;
        cfg.use_cda2f = cda;
        cfg.use_attention_gates = gates;
        let model = Model::<f32>::new(cfg, 3).unwrap();
        let y = model.logits(&x).unwrap();
        assert_eq!(y.shape(), &[1, 3, 16, 16, 16]);
        assert!(y.all_finite());
        assert_eq!(model.net.num_params() == full, msc && cda && gates);
    }
}

#[test]
fn bad_inputs_are_rejected() {
    let model = Model::<f32>::new(ModelConfig::tiny(), 0).unwrap();
    assert!(model.logits(&Tensor::zeros([1, 1, 16, 16, 12])).is_err());
    assert!(model.logits(&Tensor::zeros([1, 2, 16, 16, 16])).is_err());
    let mut cfg = ModelConfig::tiny();
    cfg.channels = [8, 8, 32, 64, 128];
    assert!(Network::new(cfg).is_err());
}

#[test]
fn all_ones_spectral_mask_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Tensor::<f64>::randn([2, 3, 6, 8, 10], 1.0, &mut rng);
    for grid in [[6, 8, 10], [3, 4, 5]] {
        let mask = SpectralMask::new("fsa", grid);
        let mut store = ParamStore::new();
        mask.init(&mut store);
        let tape = Tape::no_grad();
        let ctx = Ctx::new(&tape, &store, false, 0);
        let y = mask.forward(&ctx, &tape.constant(x.clone())).value().clone();
        assert!(y.max_abs_diff(&x) / x.max_abs() < 1e-5);
    }
}

#[test]
fn log_center_and_constant_response() {
    for sigma in [0.5, 1.0, 1.5, 2.0] {
        let k = LogKernel::new(sigma, 5).unwrap();
        let expected = -1.0 / (PI * sigma.powi(4));
        assert!((k.center_raw() - expected).abs() <= 1e-12, "σ={sigma}");
        let level = 3.7;
        let n = 9;
        let x = Tensor::<f64>::full([1, 2, n, n, n], level);
        let tape = Tape::no_grad();
        let y = k.apply(&tape.constant(x)).value().clone();
        // voxels whose 5³ support lies inside the volume
        for c in 0..2 {
            for z in 2..n - 2 {
                for yy in 2..n - 2 {
                    for xx in 2..n - 2 {
                        assert!(y.get(&[0, c, z, yy, xx]).abs() < 1e-6 * level);
                    }
                }
            }
        }
    }
}

#[test]
fn spherical_conv_commutes_with_cube_rotations() {
    let rotations = octahedral_rotations();
    assert_eq!(rotations.len(), 24);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let conv = SphericalConv3d::new("sph", 2, 3, 5);
    assert_eq!(conv.radial_weights_per_pair(), distinct_squared_radii(5).len());
    let mut store = ParamStore::new();
    conv.init(&mut store, &mut rng);
    let x = Tensor::<f64>::randn([1, 2, 8, 8, 8], 1.0, &mut rng);
    let tape = Tape::no_grad();
    let ctx = Ctx::new(&tape, &store, false, 0);
    let apply = |t: &Tensor<f64>| conv.forward(&ctx, &tape.constant(t.clone())).value().clone();
    let base = apply(&x);
    let mut distinct = 0;
    for r in rotations {
        let rx = rotate(&x, r);
        distinct += (rx.max_abs_diff(&x) > 0.0) as usize;
        let diff = apply(&rx).max_abs_diff(&rotate(&base, r));
        assert!(diff < 1e-5, "{r:?}: {diff}");
    }
    assert_eq!(distinct, 23);
}
