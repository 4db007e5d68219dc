//! Evaluates a checkpoint on a freshly generated test split and renders overlays.
//!
//! cargo run --release --example evaluate -- [checkpoint.tar] [out_dir]
//!
//! Without a checkpoint an untrained model is used.

use std::path::PathBuf;

use neurovasc::checkpoint::Checkpoint;
use neurovasc::cli::{cmd_eval, cmd_phantom, MANIFEST_FILE};
use neurovasc::data::{PhantomSpec, Split};
use neurovasc::infer::SlidingWindowSpec;
use neurovasc::network::{Model, ModelConfig};

fn main() -> neurovasc::Result<()> {
    let mut args = std::env::args().skip(1);
    let ck = args.next().map(PathBuf::from);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "evaluate_out".into()));
    let ck = match ck {
        Some(p) => p,
        None => {
            let p = out.join("untrained.tar");
            Checkpoint::from_model(&Model::new(ModelConfig::tiny(), 0)?).save(&p)?;
            p
        }
    };
    let data = out.join("data");
    cmd_phantom(&PhantomSpec::default(), 3, 3000, Some([0.0, 0.0, 1.0]), &data)?;
    let window = SlidingWindowSpec::new([64, 64, 32], 0.0);
    let res = cmd_eval(&ck, &data.join(MANIFEST_FILE), Split::Test, &out.join("eval"), Some(&window))?;
    print!("{}", res.report.to_csv());
    for (m, p) in res.montages.iter().zip(&res.mips) {
        println!("{}  {}", m.display(), p.display());
    }
    Ok(())
}
