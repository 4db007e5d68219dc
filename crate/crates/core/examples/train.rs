//! Desk-scale training of the tiny model on generated phantoms.
//!
//! cargo run --release --example train -- [epochs] [out_dir]

use std::path::PathBuf;

use neurovasc::data::preprocess::normalize_sample;
use neurovasc::data::{generate_phantom, PhantomSpec, VolumeSample};
use neurovasc::infer::SlidingWindowSpec;
use neurovasc::network::{Model, ModelConfig};
use neurovasc::train::{TrainConfig, Trainer};

fn phantoms(seeds: std::ops::Range<u64>) -> neurovasc::Result<Vec<VolumeSample>> {
    seeds.map(|s| generate_phantom(&PhantomSpec::default().with_seed(s)).map(normalize_sample)).collect()
}

fn main() -> neurovasc::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(6);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "train_out".into()));
    let (train, val) = (phantoms(1000..1040)?, phantoms(2000..2008)?);
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        max_epochs: epochs,
        patch_shape: Some([32, 32, 32]),
        window: SlidingWindowSpec::new([64, 64, 32], 0.0),
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(Model::new(ModelConfig::tiny(), 0)?, &train, &val, cfg)?;
    println!("class weights {:.3?}", t.loss.class_weights);
    for _ in 0..epochs {
        t.run(1)?;
        let r = t.history.epochs.last().expect("one epoch ran");
        println!(
            "epoch {:>2}  loss {:.4}  train DSC {:.3}  val loss {:.4}  val DSC {:.3}  {:.1}s",
            r.epoch,
            r.train_loss,
            r.train_dsc,
            r.val_loss.unwrap_or(f64::NAN),
            r.val_dsc.unwrap_or(f64::NAN),
            r.seconds
        );
    }
    let ck = t.finish().checkpoint;
    ck.save(&out.join("checkpoint.tar"))?;
    std::fs::write(out.join("history.csv"), ck.history.to_csv()).map_err(|source| neurovasc::Error::Io { path: out.clone(), source })?;
    println!("best epoch {:?}, saved to {}", ck.history.best_epoch, out.display());
    Ok(())
}
