//! Sliding-window prediction of a whole phantom with overlapping, center-weighted windows.
//!
//! cargo run --release --example infer -- [checkpoint.tar]

use std::path::Path;

use neurovasc::checkpoint::Checkpoint;
use neurovasc::data::{generate_phantom, PhantomSpec, VESSEL};
use neurovasc::infer::{argmax_labels, model_input, sliding_window_infer, SlidingWindowSpec};
use neurovasc::metrics::{confusion_counts, metrics_from_counts};
use neurovasc::network::{Model, ModelConfig};

fn main() -> neurovasc::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(p) => Checkpoint::load(Path::new(&p))?.model()?,
        None => Model::new(ModelConfig::tiny(), 0)?,
    };
    let s = generate_phantom(&PhantomSpec { grid_shape: [96, 96, 48], ..PhantomSpec::default() }.with_seed(11))?;
    for overlap in [0.25, 0.5] {
        let spec = SlidingWindowSpec::new([64, 64, 32], overlap);
        let start = std::time::Instant::now();
        let probs = sliding_window_infer(&model, &model_input(&s), s.shape, &spec)?;
        let pred = argmax_labels(&probs);
        let m = metrics_from_counts(&confusion_counts(&pred, &s.labels, VESSEL)?);
        println!("overlap {overlap}: probs {:?}, vessel DSC {:.3}, {:.1}s", probs.shape(), m.dsc, start.elapsed().as_secs_f64());
    }
    Ok(())
}
