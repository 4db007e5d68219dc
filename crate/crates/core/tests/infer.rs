use neurovasc::data::{generate_phantom, PhantomSpec};
use neurovasc::infer::{
    argmax_labels, evaluate, model_input, softmax_channels, sliding_window_infer, Blend, SlidingWindowSpec,
};
use neurovasc::network::{Model, ModelConfig};
use neurovasc::train::{train, TrainConfig};
use neurovasc_autograd::Tensor;

fn model() -> Model<f32> {
    Model::new(ModelConfig::tiny(), 21).unwrap()
}

fn phantom(shape: [usize; 3], seed: u64) -> neurovasc::data::VolumeSample {
    generate_phantom(&PhantomSpec { grid_shape: shape, ..PhantomSpec::default() }.with_seed(seed)).unwrap()
}

#[test]
fn single_window_equals_direct_softmax() {
    let m = model();
    let s = phantom([32, 32, 16], 4);
    let image = model_input(&s);
    for blend in [Blend::Center, Blend::Uniform] {
        let spec = SlidingWindowSpec { roi: [32, 32, 16], overlap: 0.5, blend };
        let windowed = sliding_window_infer(&m, &image, s.shape, &spec).unwrap();
        let direct = softmax_channels(&m.logits(&Tensor::from_vec([1, 1, 32, 32, 16], image.clone())).unwrap());
        let direct = direct.reshape(windowed.shape().to_vec());
        assert!(windowed.max_abs_diff(&direct) <= 1e-6, "{:?}", blend);
    }
}

#[test]
fn probabilities_sum_to_one_with_overlap() {
    let m = model();
    let s = phantom([48, 32, 32], 5);
    let probs = sliding_window_infer(&m, &model_input(&s), s.shape, &SlidingWindowSpec::new([32, 32, 16], 0.5)).unwrap();
    assert_eq!(probs.shape(), &[3, 48, 32, 32]);
    let vol = 48 * 32 * 32;
    for i in 0..vol {
        let sum: f32 = (0..3).map(|k| probs.data()[k * vol + i]).sum();
        assert!((sum - 1.0).abs() <= 1e-5, "voxel {i}: {sum}");
    }
}

/// Briefly fitted model; the class scores of an untrained one are near-ties.
fn fitted_model() -> Model<f32> {
    let data: Vec<_> = (0..6).map(|i| phantom([48, 48, 32], 100 + i)).collect();
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        max_epochs: 8,
        patch_shape: Some([32, 32, 32]),
        window: SlidingWindowSpec::new([32, 32, 32], 0.0),
        ..TrainConfig::default()
    };
    train(model(), &data[..5], &data[5..], &cfg).unwrap().checkpoint.model().unwrap()
}

#[test]
fn overlap_settings_largely_agree() {
    let m = fitted_model();
    let s = phantom([48, 48, 32], 6);
    let image = model_input(&s);
    let a = argmax_labels(&sliding_window_infer(&m, &image, s.shape, &SlidingWindowSpec::new([32, 32, 16], 0.5)).unwrap());
    let b = argmax_labels(&sliding_window_infer(&m, &image, s.shape, &SlidingWindowSpec::new([32, 32, 16], 0.25)).unwrap());
    let agree = a.iter().zip(&b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64;
    assert!(agree > 0.95, "{agree}");
}

#[test]
fn window_larger_than_volume_is_rejected() {
    let m = model();
    let s = phantom([32, 32, 16], 7);
    let err = sliding_window_infer(&m, &model_input(&s), s.shape, &SlidingWindowSpec::new([32, 32, 32], 0.5)).unwrap_err();
    assert!(err.to_string().contains("larger than volume"), "{err}");
    assert!(sliding_window_infer(&m, &model_input(&s), s.shape, &SlidingWindowSpec::new([32, 32, 12], 0.5)).is_err());
    assert!(sliding_window_infer(&m, &model_input(&s), s.shape, &SlidingWindowSpec::new([32, 32, 16], 1.0)).is_err());
}

#[test]
fn evaluation_leaves_the_model_untouched() {
    let m = model();
    let before = m.params.clone();
    let data = vec![("a".to_string(), phantom([32, 32, 16], 8)), ("b".to_string(), phantom([32, 32, 16], 9))];
    let spec = SlidingWindowSpec::new([32, 32, 16], 0.0);
    let r1 = evaluate(&m, &data, &spec).unwrap();
    let r2 = evaluate(&m, &data, &spec).unwrap();
    assert!(m.params.bit_eq(&before));
    assert_eq!(r1.volumes.len(), 2);
    for (x, y) in r1.volumes.iter().zip(&r2.volumes) {
        assert_eq!(serde_json::to_value(&x.classes).unwrap(), serde_json::to_value(&y.classes).unwrap());
    }
    assert!(evaluate(&m, &[], &spec).is_err());
}
