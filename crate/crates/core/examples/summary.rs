//! Parameter count and per-module breakdown of the default and desk-scale models.
//!
//! cargo run --example summary

use neurovasc::cli::format_summary;
use neurovasc::network::{ModelConfig, Network};

fn main() -> neurovasc::Result<()> {
    for (name, cfg) in [("default", ModelConfig::default()), ("tiny", ModelConfig::tiny())] {
        let s = Network::new(cfg)?.summary();
        println!("== {name}");
        print!("{}", format_summary(&s));
    }
    Ok(())
}
