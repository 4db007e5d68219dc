use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use neurovasc::cli::{cmd_eval, cmd_gradcheck, cmd_infer, cmd_phantom, cmd_summary, cmd_train, format_summary};
use neurovasc::config::{ExperimentConfig, SEED_VAR};
use neurovasc::data::{PhantomSpec, Split};
use neurovasc::network::ModelConfig;
use neurovasc::verify::{format_table, Scope};
use neurovasc::Error;

#[derive(Parser)]
#[command(name = "neurovasc", version, about = "Vessel segmentation on synthetic and stored volumes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Block,
    Module,
    Network,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Tiny,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom dataset and its manifest.
    Phantom {
        /// Phantom spec JSON; defaults are used when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// First per-sample seed (overrides NEUROVASC_SEED and the spec).
        #[arg(long)]
        seed: Option<u64>,
        /// Train:val:test proportions, e.g. 100:10:27.
        #[arg(long, value_parser = parse_split)]
        split: Option<[f64; 3]>,
    },
    /// Train from an experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one split of a dataset manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset manifest.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict one stored volume.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Volume sidecar JSON.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, value_enum)]
        scope: ScopeArg,
    },
    /// Parameter count and per-module breakdown.
    Summary {
        /// Experiment config whose model is summarized.
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "default")]
        preset: Preset,
        #[arg(long)]
        json: bool,
    },
}

fn parse_split(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s.split(':').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    <[f64; 3]>::try_from(parts).map_err(|_| format!("expected three proportions a:b:c, got {s:?}"))
}

/// Writes to stdout, treating a closed pipe as success.
fn emit(text: &str) -> neurovasc::Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io { path: "<stdout>".into(), source: e }),
        _ => Ok(()),
    }
}

fn env_seed() -> neurovasc::Result<Option<u64>> {
    match std::env::var(SEED_VAR) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Error::InvalidConfig(format!("{SEED_VAR}={v:?} is not a seed"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> neurovasc::Result<bool> {
    match cli.command {
        Command::Phantom { spec, count, out, seed, split } => {
            let spec = match spec {
                Some(p) => {
                    let bytes = std::fs::read(&p).map_err(|source| Error::Io { path: p.clone(), source })?;
                    serde_json::from_slice::<PhantomSpec>(&bytes).map_err(|e| Error::Format { path: p, reason: e.to_string() })?
                }
                None => PhantomSpec::default(),
            };
            let seed = match seed {
                Some(s) => s,
                None => env_seed()?.unwrap_or(spec.seed),
            };
            let m = cmd_phantom(&spec, count, seed, split, &out)?;
            let n = |s| m.paths(s).len();
            emit(&format!("wrote {count} phantoms to {} (train {}, val {}, test {})\n", out.display(), n(Split::Train), n(Split::Val), n(Split::Test)))?;
        }
        Command::Train { config, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg = cfg.with_seed(s);
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let files = cmd_train(&cfg)?;
            emit(&format!("{}\n", serde_json::to_string_pretty(&files)?))?;
        }
        Command::Eval { checkpoint, data, split, out } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Val => Split::Val,
                SplitArg::Test => Split::Test,
            };
            let res = cmd_eval(&checkpoint, &data, split, &out, None)?;
            emit(&res.report.to_csv())?;
        }
        Command::Infer { checkpoint, input, out } => {
            let files = cmd_infer(&checkpoint, &input, &out, None)?;
            emit(&format!("{}\n", serde_json::to_string_pretty(&files)?))?;
        }
        Command::Gradcheck { scope } => {
            let scope = match scope {
                ScopeArg::Block => Scope::Block,
                ScopeArg::Module => Scope::Module,
                ScopeArg::Network => Scope::Network,
            };
            let rows = cmd_gradcheck(scope);
            emit(&format_table(&rows))?;
            return Ok(rows.iter().all(|r| r.passed));
        }
        Command::Summary { config, preset, json } => {
            let model = match (config, preset) {
                (Some(p), _) => ExperimentConfig::load(&p)?.model,
                (None, Preset::Default) => ModelConfig::default(),
                (None, Preset::Tiny) => ModelConfig::tiny(),
            };
            let s = cmd_summary(&model)?;
            if json {
                emit(&format!("{}\n", serde_json::to_string_pretty(&s)?))?;
            } else {
                emit(&format_summary(&s))?;
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
