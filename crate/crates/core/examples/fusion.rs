//! Forward pass through the bottleneck fusion module and the cross-domain fusion block.
//!
//! cargo run --example fusion

use neurovasc::fusion::{Cda2f, Cda2fConfig, Msc2f, Msc2fConfig};
use neurovasc::params::{Ctx, ParamStore};
use neurovasc_autograd::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> neurovasc::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let msc = Msc2f::new("msc", Msc2fConfig::new(16, [4, 4, 2]))?;
    let cda = Cda2f::new("cda", Cda2fConfig::new(8, [8, 8, 4]))?;
    let mut store = ParamStore::<f32>::new();
    msc.init(&mut store, &mut rng);
    cda.init(&mut store, &mut rng);

    let tape = Tape::no_grad();
    let ctx = Ctx::new(&tape, &store, false, 0);
    let deep = tape.constant(Tensor::randn([1, 16, 4, 4, 2], 1.0, &mut rng));
    let t = msc.trace(&ctx, &deep)?;
    println!("msc2f  aspp {:?} edge {:?} freq {:?} composite {:?} output {:?}", t.aspp.shape(), t.edge.shape(), t.freq.shape(), t.composite.shape(), t.output.shape());
    println!("msc2f  params {}", msc.num_params());

    let skip = tape.constant(Tensor::randn([1, 8, 8, 8, 4], 1.0, &mut rng));
    let y = cda.forward(&ctx, &skip)?;
    println!("cda2f  {:?} -> {:?}, params {}", skip.shape(), y.shape(), cda.num_params());
    Ok(())
}
