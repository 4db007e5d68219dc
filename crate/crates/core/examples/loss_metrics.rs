//! Hybrid loss terms and overlap metrics on a small hand-made volume.
//!
//! cargo run --example loss_metrics

use neurovasc::loss::{class_weights_from_fractions, hybrid_loss, one_hot, LossConfig};
use neurovasc::metrics::{confusion_counts, metrics_from_counts};
use neurovasc_autograd::{Tape, Tensor};

fn main() -> neurovasc::Result<()> {
    let shape = [4, 4, 4];
    let gt: Vec<u8> = (0..64).map(|i| if i % 8 == 0 { 1 } else if i % 13 == 0 { 2 } else { 0 }).collect();
    let pred: Vec<u8> = gt.iter().enumerate().map(|(i, &l)| if i % 16 == 0 { 0 } else { l }).collect();

    let weights = class_weights_from_fractions(&[0.981, 0.014, 0.005])?;
    println!("class weights {weights:.4?}");
    let cfg = LossConfig::default().with_weights(weights);

    // soft probabilities leaning towards the prediction
    let probs = Tensor::from_fn([1, 3, 4, 4, 4], |i| {
        let (k, v) = (i / 64, i % 64);
        if pred[v] as usize == k { 0.8 } else { 0.1 }
    });
    let target = one_hot::<f64>(&gt, 1, 3, shape);
    let tape = Tape::no_grad();
    let terms = hybrid_loss(&tape.constant(probs), &target, &cfg);
    let v = |t: &neurovasc_autograd::Var<'_, f64>| t.value().data()[0];
    println!("wce {:.4}  dice {:.4}  total {:.4}", v(&terms.wce), v(&terms.dice), v(&terms.total));

    for class in [1, 2] {
        let m = metrics_from_counts(&confusion_counts(&pred, &gt, class)?);
        println!("class {class}: DSC {:.3} JI {:.3} Sens {:.3} Spec {:.3} Prec {:.3}", m.dsc, m.ji, m.sens, m.spec, m.prec);
    }
    Ok(())
}
