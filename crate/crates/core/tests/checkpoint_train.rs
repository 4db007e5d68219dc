mod common;

use std::io::Read;

use common::assert_valid;
use neurovasc::checkpoint::{Checkpoint, CHECKPOINT_VERSION};
use neurovasc::data::{generate_phantom, PhantomSpec, VolumeSample};
use neurovasc::infer::SlidingWindowSpec;
use neurovasc::network::{Model, ModelConfig};
use neurovasc::train::{train, Trainer, TrainConfig, TrainingHistory};
use neurovasc::Error;
use neurovasc_autograd::Tensor;

fn phantoms(n: usize, seed: u64) -> Vec<VolumeSample> {
    (0..n as u64)
        .map(|i| generate_phantom(&PhantomSpec { grid_shape: [32, 32, 16], ..PhantomSpec::default() }.with_seed(seed + i)).unwrap())
        .collect()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        max_epochs: epochs,
        window: SlidingWindowSpec::new([32, 32, 16], 0.0),
        ..TrainConfig::default()
    }
}

fn probe() -> Tensor<f32> {
    Tensor::from_fn([1, 1, 32, 32, 16], |i| ((i * 13) % 97) as f32 / 97.0)
}

#[test]
fn one_epoch_smoke_run_round_trips() {
    let data = phantoms(5, 1);
    let out = train(Model::new(ModelConfig::tiny(), 4).unwrap(), &data[..4], &data[4..], &quick(1)).unwrap();
    let ck = out.checkpoint;
    assert_eq!(ck.history.epochs.len(), 1);
    assert_eq!(ck.history.best_epoch, Some(1));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.tar");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert!(back.params.bit_eq(&ck.params));
    assert_eq!(back.history, ck.history);
    assert_eq!(back.train_config, ck.train_config);
    let (a, b) = (ck.model().unwrap().logits(&probe()).unwrap(), back.model().unwrap().logits(&probe()).unwrap());
    assert_eq!(a.data(), b.data());

    let cfg = back.train_config.clone().unwrap();
    let mut t = Trainer::resume(back, &data[..4], &data[4..], cfg).unwrap();
    t.run(0).unwrap();
    assert_eq!(t.epochs_done(), 1);
    assert_eq!(t.finish().checkpoint.history, ck.history);
}

#[test]
fn mismatched_config_is_refused() {
    let model = Model::<f32>::new(ModelConfig::tiny(), 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.tar");
    Checkpoint::from_model(&model).save(&path).unwrap();
    Checkpoint::load_for(&path, &ModelConfig::tiny()).unwrap();
    let mut other = ModelConfig::tiny();
    other.dropout_rate = 0.1;
    let err = Checkpoint::load_for(&path, &other).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(ref m) if m.contains("hash")), "{err}");
}

/// Copy of a checkpoint archive with one member replaced.
fn rewrite(src: &std::path::Path, dst: &std::path::Path, member: &str, bytes: &[u8]) {
    let mut archive = tar::Archive::new(std::fs::File::open(src).unwrap());
    let mut out = tar::Builder::new(std::fs::File::create(dst).unwrap());
    for entry in archive.entries().unwrap() {
        let mut entry = entry.unwrap();
        let name = entry.path().unwrap().to_string_lossy().into_owned();
        let mut data = Vec::new();
        entry.read_to_end(&mut data).unwrap();
        let data = if name == member { bytes.to_vec() } else { data };
        let mut header = tar::Header::new_gnu();
        header.set_size(data.len() as u64);
        header.set_mode(0o644);
        header.set_cksum();
        out.append_data(&mut header, &name, data.as_slice()).unwrap();
    }
    out.finish().unwrap();
}

#[test]
fn damaged_archives_are_reported() {
    let model = Model::<f32>::new(ModelConfig::tiny(), 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.tar");
    Checkpoint::from_model(&model).save(&good).unwrap();

    let old = dir.path().join("old.tar");
    rewrite(&good, &old, "VERSION", b"neurovasc-checkpoint/0");
    let err = Checkpoint::load(&old).unwrap_err();
    assert!(err.to_string().contains(CHECKPOINT_VERSION), "{err}");

    let short = dir.path().join("short.tar");
    rewrite(&good, &short, "tensors/head.weight.f32", &[0u8; 12]);
    assert!(matches!(Checkpoint::load(&short), Err(Error::Checkpoint(_))));

    let junk = dir.path().join("junk.tar");
    std::fs::write(&junk, b"not an archive at all").unwrap();
    assert!(matches!(Checkpoint::load(&junk), Err(Error::Checkpoint(_))));
}

#[test]
fn same_seed_reproduces_training() {
    let data = phantoms(3, 10);
    let run = || train(Model::new(ModelConfig::tiny(), 2).unwrap(), &data[..2], &data[2..], &quick(2)).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.checkpoint.history.epochs[0].train_loss, b.checkpoint.history.epochs[0].train_loss);
    assert!(a.last.bit_eq(&b.last));
    let mut other = quick(1);
    other.seed = 99;
    let c = train(Model::new(ModelConfig::tiny(), 2).unwrap(), &data[..2], &data[2..], &other).unwrap();
    assert_ne!(a.checkpoint.history.epochs[0].train_loss, c.checkpoint.history.epochs[0].train_loss);
}

#[test]
fn single_batch_loss_does_not_increase() {
    let data = phantoms(2, 20);
    let mut model_cfg = ModelConfig::tiny();
    model_cfg.dropout_rate = 0.0;
    model_cfg.cda2f.drop_path_rate = 0.0;
    let cfg = TrainConfig {
        max_epochs: 10,
        batch_size: 1,
        flip_probability: 0.0,
        noise_std: 0.0,
        window: SlidingWindowSpec::new([32, 32, 16], 0.0),
        ..TrainConfig::default()
    };
    assert_eq!(cfg.learning_rate, TrainConfig::default().learning_rate);
    let out = train(Model::new(model_cfg, 5).unwrap(), &data[..1], &data[1..], &cfg).unwrap();
    let losses: Vec<f64> = out.checkpoint.history.epochs.iter().map(|r| r.train_loss).collect();
    assert_eq!(losses.len(), 10);
    for w in losses.windows(2) {
        assert!(w[1] <= w[0], "{losses:?}");
    }
}

#[test]
fn early_stopping_keeps_the_best_evaluation() {
    let data = phantoms(3, 30);
    let cfg = TrainConfig { early_stop_patience: 2, learning_rate: 3e-3, ..quick(8) };
    let h = train(Model::new(ModelConfig::tiny(), 6).unwrap(), &data[..2], &data[2..], &cfg).unwrap().checkpoint.history;
    let best = h.best_val_loss.unwrap();
    let best_epoch = h.best_epoch.unwrap();
    assert!(h.epochs.iter().filter_map(|r| r.val_loss).all(|l| best <= l));
    assert_eq!(h.epochs[best_epoch - 1].val_loss, Some(best));
    if h.stopped_early {
        assert_eq!(h.epochs.len(), best_epoch + 2);
    }
}

#[test]
fn invalid_runs_fail_cleanly() {
    let data = phantoms(2, 40);
    let model = || Model::new(ModelConfig::tiny(), 0).unwrap();
    assert!(matches!(train(model(), &data[..1], &[], &quick(1)), Err(Error::EmptyDataset(_))));
    let huge = TrainConfig { learning_rate: 1e30, ..quick(3) };
    let err = train(model(), &data[..1], &data[1..], &huge).err().expect("diverges");
    assert!(matches!(err, Error::Divergence(ref m) if m.contains("epoch")), "{err}");
    assert!(train(model(), &data[..1], &data[1..], &TrainConfig { learning_rate: 0.0, ..quick(1) }).is_err());
}

#[test]
fn history_csv_round_trips() {
    let data = phantoms(3, 50);
    let cfg = TrainConfig { val_every: 2, ..quick(3) };
    let h = train(Model::new(ModelConfig::tiny(), 1).unwrap(), &data[..2], &data[2..], &cfg).unwrap().checkpoint.history;
    assert_eq!(h.epochs[0].val_loss, None);
    assert!(h.epochs[1].val_loss.is_some());
    assert_eq!(TrainingHistory::from_csv(&h.to_csv()).unwrap(), h.epochs);
    assert!(TrainingHistory::from_csv("epoch,loss\n1,2\n").is_err());
    assert_valid("training_history", &serde_json::to_value(&h).unwrap());
}
