//! Loads an experiment config, applies environment overrides and prints the result.
//!
//! NEUROVASC__train__learning_rate=0.001 NEUROVASC_SEED=5 cargo run --example config -- [config.json]

use std::path::Path;

use neurovasc::config::ExperimentConfig;

fn main() -> neurovasc::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(p) => ExperimentConfig::load(Path::new(&p))?,
        None => ExperimentConfig::from_json(serde_json::json!({"model": {"channels": [8, 16, 32, 64, 128], "input_shape": [64, 64, 32]}}))?
            .with_env(std::env::vars())?,
    };
    cfg.validate()?;
    println!("{}", serde_json::to_string_pretty(&cfg)?);
    println!("config hash {}", cfg.hash());
    Ok(())
}
