//! Command implementations behind the `neurovasc` binary.
//!
//! Every command writes its outputs under one directory and returns the
//! paths it produced, so the same entry points serve the binary, the
//! examples and the tests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::{ExperimentConfig, RunManifest};
use crate::data::container::{load_volume, save_volume};
use crate::data::manifest::DEFAULT_SPLIT;
use crate::data::nifti::save_nifti_pair;
use crate::data::{class_fractions, generate_phantom, DatasetManifest, PhantomSpec, Split, VolumeSample, VESSEL};
use crate::error::IoContext;
use crate::infer::{evaluate_with_predictions, predict_labels, SlidingWindowSpec};
use crate::metrics::MetricsReport;
use crate::network::{Model, ModelConfig, Network, NetworkSummary};
use crate::report::{save_png, OverlayInput};
use crate::train::train;
use crate::verify::{run_scope, CheckRow, Scope};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.tar";
/// Slices per montage.
pub const MONTAGE_SLICES: usize = 8;

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).at(path)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).at(dir)
}

/// Name used for outputs derived from a manifest entry.
fn stem(path: &str) -> String {
    Path::new(path).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.to_string())
}

/// Writes `count` phantoms seeded `seed + i` and a manifest tagging them
/// train, val and test in that order.
pub fn cmd_phantom(spec: &PhantomSpec, count: usize, seed: u64, split: Option<[f64; 3]>, out: &Path) -> Result<DatasetManifest> {
    if count == 0 {
        return Err(Error::InvalidConfig("count must be ≥ 1".into()));
    }
    spec.validate()?;
    ensure_dir(out)?;
    let mut paths = Vec::with_capacity(count);
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let sample = generate_phantom(&spec.clone().with_seed(seed + i as u64))?;
        let name = format!("phantom_{i:04}.json");
        save_volume(&out.join(&name), &sample)?;
        paths.push(name);
        samples.push(sample);
    }
    let mut manifest = DatasetManifest::with_split(paths, split.unwrap_or(DEFAULT_SPLIT))?;
    let train: Vec<&VolumeSample> =
        manifest.entries.iter().zip(&samples).filter(|(e, _)| e.split == Split::Train).map(|(_, s)| s).collect();
    if !train.is_empty() {
        manifest.class_fractions = class_fractions(train)?;
    }
    manifest.seed = Some(seed);
    manifest.spec_hash = Some(spec.clone().with_seed(seed).hash());
    manifest.save(&out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Train and validation samples for an experiment: loaded from its manifest
/// or generated in memory.
pub fn experiment_data(cfg: &ExperimentConfig) -> Result<(Vec<VolumeSample>, Vec<VolumeSample>)> {
    match &cfg.manifest {
        Some(path) => {
            let m = DatasetManifest::load(path)?;
            let root = DatasetManifest::root_of(path);
            Ok((m.load_split(&root, Split::Train)?, m.load_split(&root, Split::Val)?))
        }
        None => {
            let m = DatasetManifest::with_split((0..cfg.count).map(|i| i.to_string()).collect(), cfg.split)?;
            let (mut tr, mut va) = (Vec::new(), Vec::new());
            for (i, e) in m.entries.iter().enumerate() {
                let gen = || generate_phantom(&cfg.phantom.clone().with_seed(cfg.phantom.seed + i as u64));
                match e.split {
                    Split::Train => tr.push(gen()?),
                    Split::Val => va.push(gen()?),
                    Split::Test => {}
                }
            }
            Ok((tr, va))
        }
    }
}

/// Files written by a training run.
#[derive(Clone, Debug, Serialize)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub history_csv: PathBuf,
    pub history_json: PathBuf,
    pub metrics_json: PathBuf,
    pub run_manifest: PathBuf,
    pub config: PathBuf,
}

/// Trains, then writes the best checkpoint, history, validation metrics,
/// the resolved config and a run manifest under `cfg.output_dir`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutputs> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    ensure_dir(out)?;
    let (train_set, val_set) = experiment_data(cfg)?;
    let model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    let outcome = train(model, &train_set, &val_set, &cfg.train)?;
    let ck = outcome.checkpoint;
    let files = TrainOutputs {
        checkpoint: out.join(CHECKPOINT_FILE),
        history_csv: out.join("history.csv"),
        history_json: out.join("history.json"),
        metrics_json: out.join("metrics.json"),
        run_manifest: out.join("run_manifest.json"),
        config: out.join("config.json"),
    };
    ck.save(&files.checkpoint)?;
    fs::write(&files.history_csv, ck.history.to_csv()).at(&files.history_csv)?;
    write_json(&files.history_json, &ck.history)?;
    let window = &cfg.train.window;
    let named: Vec<(String, VolumeSample)> = val_set.into_iter().enumerate().map(|(i, s)| (format!("val_{i:04}"), s)).collect();
    let (report, _) = evaluate_with_predictions(&ck.model()?, &named, window)?;
    write_json(&files.metrics_json, &report)?;
    write_json(&files.config, cfg)?;
    write_json(&files.run_manifest, &RunManifest::new("train", cfg.hash(), cfg.train.seed))?;
    Ok(files)
}

fn check_compatible(model: &ModelConfig, name: &str, s: &VolumeSample) -> Result<()> {
    if let Some(&bad) = s.labels.iter().find(|&&l| l as usize >= model.num_classes) {
        return Err(Error::Checkpoint(format!("{name} has label {bad} but the checkpoint predicts {} classes", model.num_classes)));
    }
    if model.input_channels != 1 {
        return Err(Error::Checkpoint(format!("{name} is single-channel but the checkpoint expects {} channels", model.input_channels)));
    }
    Ok(())
}

/// Window used by a checkpoint unless overridden.
fn window_of(ck: &Checkpoint, window: Option<&SlidingWindowSpec>) -> SlidingWindowSpec {
    window.cloned().or_else(|| ck.train_config.as_ref().map(|t| t.window.clone())).unwrap_or_default()
}

/// Files written by an evaluation.
#[derive(Clone, Debug, Serialize)]
pub struct EvalOutputs {
    pub metrics_json: PathBuf,
    pub metrics_csv: PathBuf,
    pub montages: Vec<PathBuf>,
    pub mips: Vec<PathBuf>,
    pub report: MetricsReport,
}

/// Metrics on one split of a manifest plus per-volume overlay figures.
pub fn cmd_eval(checkpoint: &Path, data: &Path, split: Split, out: &Path, window: Option<&SlidingWindowSpec>) -> Result<EvalOutputs> {
    let ck = Checkpoint::load(checkpoint)?;
    let model = ck.model()?;
    let manifest = DatasetManifest::load(data)?;
    let root = DatasetManifest::root_of(data);
    let names = manifest.paths(split);
    if names.is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no {split:?} samples", data.display())));
    }
    let mut dataset = Vec::with_capacity(names.len());
    for p in names {
        let s = load_volume(&root.join(p))?;
        check_compatible(model.config(), p, &s)?;
        dataset.push((stem(p), s));
    }
    ensure_dir(out)?;
    let (report, preds) = evaluate_with_predictions(&model, &dataset, &window_of(&ck, window))?;
    let (mut montages, mut mips) = (Vec::new(), Vec::new());
    for ((name, s), pred) in dataset.iter().zip(&preds) {
        let overlay = OverlayInput { shape: s.shape, image: &s.image, pred, gt: &s.labels, class: VESSEL };
        let montage = out.join(format!("{name}_montage.png"));
        save_png(&overlay.montage(&overlay.representative_slices(MONTAGE_SLICES), 4)?, &montage)?;
        let mip = out.join(format!("{name}_mip.png"));
        save_png(&overlay.mip()?, &mip)?;
        montages.push(montage);
        mips.push(mip);
    }
    let metrics_json = out.join("metrics.json");
    let metrics_csv = out.join("metrics.csv");
    write_json(&metrics_json, &report)?;
    fs::write(&metrics_csv, report.to_csv()).at(&metrics_csv)?;
    Ok(EvalOutputs { metrics_json, metrics_csv, montages, mips, report })
}

/// Files written by inference on one volume.
#[derive(Clone, Debug, Serialize)]
pub struct InferOutputs {
    pub volume: PathBuf,
    pub image_nifti: PathBuf,
    pub labels_nifti: PathBuf,
    pub seconds: f64,
}

/// Predicts one stored volume and writes the prediction as a container
/// (image plus predicted labels) and as a NIfTI pair.
pub fn cmd_infer(checkpoint: &Path, input: &Path, out: &Path, window: Option<&SlidingWindowSpec>) -> Result<InferOutputs> {
    let ck = Checkpoint::load(checkpoint)?;
    let model = ck.model()?;
    let mut s = load_volume(input)?;
    let name = stem(&input.to_string_lossy());
    check_compatible(model.config(), &name, &s)?;
    let (pred, seconds) = predict_labels(&model, &s, &window_of(&ck, window))?;
    s.labels = pred;
    ensure_dir(out)?;
    let files = InferOutputs {
        volume: out.join(format!("{name}_pred.json")),
        image_nifti: out.join(format!("{name}_image.nii.gz")),
        labels_nifti: out.join(format!("{name}_pred.nii.gz")),
        seconds,
    };
    save_volume(&files.volume, &s)?;
    save_nifti_pair(&s, &files.image_nifti, &files.labels_nifti)?;
    Ok(files)
}

/// Finite-difference results for one scope.
pub fn cmd_gradcheck(scope: Scope) -> Vec<CheckRow> {
    run_scope(scope)
}

pub fn cmd_summary(cfg: &ModelConfig) -> Result<NetworkSummary> {
    Ok(Network::new(cfg.clone())?.summary())
}

/// Human-readable summary table.
pub fn format_summary(s: &NetworkSummary) -> String {
    let width = s.breakdown.iter().map(|m| m.module.len()).max().unwrap_or(6).max(6);
    let mut text = format!("{:<width$} {:>12}\n", "module", "params");
    for m in &s.breakdown {
        text.push_str(&format!("{:<width$} {:>12}\n", m.module, m.params));
    }
    text.push_str(&format!("{:<width$} {:>12}\n", "total", s.parameter_count));
    text
}
