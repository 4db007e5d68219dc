//! Mini-batch training with Adam, validation by sliding windows and early stopping.

use std::time::Instant;

use neurovasc_autograd::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{augment_background_noise, augment_flip, class_fractions, to_unit_range, VolumeSample, VESSEL};
use crate::infer::{argmax_labels, model_input, sliding_window_infer, SlidingWindowSpec};
use crate::loss::{class_weights_from_fractions, hybrid_loss, hybrid_loss_from_logits, one_hot, LossConfig};
use crate::metrics::{confusion_counts, metrics_from_counts, ConfusionCounts};
use crate::network::{Model, SPATIAL_MULTIPLE};
use crate::optim::{Adam, AdamConfig};
use crate::params::{Ctx, ParamStore};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self { beta1: a.beta1, beta2: a.beta2, eps: a.eps }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Evaluations without improvement before stopping.
    pub early_stop_patience: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub loss: LossConfig,
    pub val_every: usize,
    /// Random crop fed to the network each step; `None` trains on whole volumes.
    pub patch_shape: Option<[usize; 3]>,
    pub flip_probability: f64,
    /// Background noise std in `[0, 1]` intensity units.
    pub noise_std: f64,
    pub window: SlidingWindowSpec,
    /// Stop after the first epoch that ends past this many seconds.
    pub max_seconds: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 8e-5,
            batch_size: 2,
            max_epochs: 100,
            early_stop_patience: 15,
            seed: 0,
            optimizer: OptimizerConfig::default(),
            loss: LossConfig::default(),
            val_every: 1,
            patch_shape: None,
            flip_probability: 0.3,
            noise_std: 0.01,
            window: SlidingWindowSpec::default(),
            max_seconds: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch size must be ≥ 1".into());
        }
        if self.early_stop_patience == 0 {
            return bad("early-stop patience must be ≥ 1".into());
        }
        if self.val_every == 0 {
            return bad("val_every must be ≥ 1".into());
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return bad(format!("flip probability {} outside [0, 1]", self.flip_probability));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise std must be ≥ 0, got {}", self.noise_std));
        }
        if let Some(p) = self.patch_shape {
            if p.iter().any(|&n| n == 0 || n % SPATIAL_MULTIPLE != 0) {
                return bad(format!("patch {p:?} must be positive multiples of {SPATIAL_MULTIPLE}"));
            }
        }
        self.loss.validate(num_classes)?;
        self.window.validate()
    }

    fn adam(&self) -> AdamConfig {
        let o = self.optimizer;
        AdamConfig { lr: self.learning_rate, beta1: o.beta1, beta2: o.beta2, eps: o.eps }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// Vessel DSC of the argmax over the training patches.
    pub train_dsc: f64,
    pub val_loss: Option<f64>,
    /// Mean vessel DSC over validation volumes.
    pub val_dsc: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub wall_seconds: f64,
    pub stopped_early: bool,
}

pub const HISTORY_COLUMNS: [&str; 6] = ["epoch", "train_loss", "train_dsc", "val_loss", "val_dsc", "seconds"];

impl TrainingHistory {
    pub fn to_csv(&self) -> String {
        let mut s = HISTORY_COLUMNS.join(",");
        s.push('\n');
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch,
                r.train_loss,
                r.train_dsc,
                opt(r.val_loss),
                opt(r.val_dsc),
                r.seconds
            ));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Vec<EpochRecord>> {
        let bad = |m: String| Error::InvalidConfig(format!("history CSV: {m}"));
        let mut lines = text.lines();
        if lines.next().map(|h| h.split(',').collect::<Vec<_>>()) != Some(HISTORY_COLUMNS.to_vec()) {
            return Err(bad("unexpected header".into()));
        }
        lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != HISTORY_COLUMNS.len() {
                    return Err(bad(format!("row {l:?} has {} fields", f.len())));
                }
                let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
                let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
                Ok(EpochRecord {
                    epoch: f[0].parse().map_err(|e| bad(format!("{e}")))?,
                    train_loss: num(f[1])?,
                    train_dsc: num(f[2])?,
                    val_loss: opt(f[3])?,
                    val_dsc: opt(f[4])?,
                    seconds: num(f[5])?,
                })
            })
            .collect()
    }

    /// Evaluations after the best one.
    fn evals_since_best(&self) -> usize {
        let best = self.best_epoch.unwrap_or(0);
        self.epochs.iter().filter(|r| r.epoch > best && r.val_loss.is_some()).count()
    }
}

/// Everything produced by a training run.
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub checkpoint: Checkpoint,
    /// Parameters after the last completed epoch.
    pub last: ParamStore<f32>,
}

/// Stacks samples into a `(B, 1, D, H, W)` image tensor and `(B, D, H, W)` labels.
pub fn batch_tensors(samples: &[VolumeSample]) -> (Tensor<f32>, Vec<u8>) {
    let shape = samples[0].shape;
    let mut image = Vec::with_capacity(samples.len() * samples[0].voxels());
    let mut labels = Vec::with_capacity(image.capacity());
    for s in samples {
        assert_eq!(s.shape, shape, "batch members differ in shape");
        image.extend(model_input(s));
        labels.extend_from_slice(&s.labels);
    }
    (Tensor::from_vec([samples.len(), 1, shape[0], shape[1], shape[2]], image), labels)
}

/// Hybrid loss and vessel DSC of one volume's blended probabilities.
pub fn volume_loss(probs: &Tensor<f32>, labels: &[u8], loss: &LossConfig) -> Result<(f64, f64)> {
    let s = probs.shape();
    let (c, spatial) = (s[0], [s[1], s[2], s[3]]);
    let tape = Tape::<f64>::no_grad();
    let p = tape.constant(probs.cast::<f64>().reshape([1, c, spatial[0], spatial[1], spatial[2]]));
    let l = hybrid_loss(&p, &one_hot(labels, 1, c, spatial), loss).total.value().data()[0];
    let counts = confusion_counts(&argmax_labels(probs), labels, VESSEL)?;
    Ok((l, metrics_from_counts(&counts).dsc))
}

fn random_patch(s: &VolumeSample, patch: [usize; 3], rng: &mut impl Rng) -> Result<VolumeSample> {
    if (0..3).any(|a| patch[a] > s.shape[a]) {
        return Err(Error::Shape(format!("patch {patch:?} larger than volume {:?}", s.shape)));
    }
    let origin = std::array::from_fn(|a| rng.random_range(0..=s.shape[a] - patch[a]));
    Ok(s.crop(origin, patch))
}

/// Resumable optimization state.
pub struct Trainer<'a> {
    pub model: Model<f32>,
    pub cfg: TrainConfig,
    /// Loss with class weights resolved.
    pub loss: LossConfig,
    pub history: TrainingHistory,
    adam: Adam,
    best: ParamStore<f32>,
    best_adam: Adam,
    train: &'a [VolumeSample],
    val: &'a [VolumeSample],
}

impl<'a> Trainer<'a> {
    pub fn new(model: Model<f32>, train: &'a [VolumeSample], val: &'a [VolumeSample], cfg: TrainConfig) -> Result<Self> {
        let c = model.config().num_classes;
        cfg.validate(c)?;
        if train.is_empty() || val.is_empty() {
            return Err(Error::EmptyDataset("training needs non-empty train and validation sets".into()));
        }
        let mut loss = cfg.loss.clone();
        if loss.class_weights.is_empty() {
            let mut fr = class_fractions(train)?;
            fr.resize(c, 0.0);
            loss.class_weights = class_weights_from_fractions(&fr)?;
        }
        let adam = Adam::new(cfg.adam());
        Ok(Self {
            best: model.params.clone(),
            best_adam: adam.clone(),
            model,
            loss,
            history: TrainingHistory::default(),
            adam,
            cfg,
            train,
            val,
        })
    }

    /// Continues from a checkpoint at its recorded epoch.
    pub fn resume(ck: Checkpoint, train: &'a [VolumeSample], val: &'a [VolumeSample], cfg: TrainConfig) -> Result<Self> {
        let mut t = Self::new(Model { net: crate::network::Network::new(ck.model_config)?, params: ck.params }, train, val, cfg)?;
        if let Some(a) = ck.optimizer {
            t.adam = a;
        }
        t.adam.cfg = t.cfg.adam();
        t.best = t.model.params.clone();
        t.best_adam = t.adam.clone();
        t.history = ck.history;
        Ok(t)
    }

    pub fn epochs_done(&self) -> usize {
        self.history.epochs.len()
    }

    fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64);
        rng
    }

    /// One pass over the training set; returns mean loss and pooled vessel DSC.
    fn train_epoch(&mut self, epoch: usize) -> Result<(f64, f64)> {
        let mut rng = self.epoch_rng(epoch);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng);
        let c = self.model.config().num_classes;
        let mut total = 0.0;
        let mut counts = ConfusionCounts::default();
        let batches: Vec<Vec<usize>> = order.chunks(self.cfg.batch_size).map(<[usize]>::to_vec).collect();
        for (bi, batch) in batches.iter().enumerate() {
            let mut samples = Vec::with_capacity(batch.len());
            for &i in batch {
                let mut s = augment_flip(&self.train[i], self.cfg.flip_probability, &mut rng);
                if !s.meta.unit_range {
                    s = to_unit_range(s);
                }
                s = augment_background_noise(&s, self.cfg.noise_std, &mut rng);
                if let Some(p) = self.cfg.patch_shape {
                    s = random_patch(&s, p, &mut rng)?;
                }
                samples.push(s);
            }
            let (x, labels) = batch_tensors(&samples);
            let (d, h, w) = (x.shape()[2], x.shape()[3], x.shape()[4]);
            let target = one_hot::<f32>(&labels, samples.len(), c, [d, h, w]);
            let tape = Tape::new();
            let ctx = Ctx::new(&tape, &self.model.params, true, rng.random());
            let logits = self.model.net.forward(&ctx, &tape.constant(x))?;
            let terms = hybrid_loss_from_logits(&logits, &target, &self.loss);
            let value = terms.total.value().data()[0] as f64;
            if !value.is_finite() {
                return Err(Error::Divergence(format!("non-finite loss {value} at epoch {epoch}, batch {}", bi + 1)));
            }
            let grads = ctx.gradients(&tape.backward(&terms.total));
            if let Some((path, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
                return Err(Error::Divergence(format!("non-finite gradient for {path} at epoch {epoch}, batch {}", bi + 1)));
            }
            self.adam.update(&mut self.model.params, &grads);
            self.model.params.apply_updates(ctx.take_updates());
            total += value;
            let vol = d * h * w;
            let pred = argmax_channels(logits.value(), vol);
            counts += confusion_counts(&pred, &labels, VESSEL)?;
        }
        Ok((total / batches.len() as f64, metrics_from_counts(&counts).dsc))
    }

    /// Mean hybrid loss and vessel DSC over the validation set.
    pub fn validate(&self) -> Result<(f64, f64)> {
        let (mut loss, mut dsc) = (0.0, 0.0);
        for s in self.val {
            let probs = sliding_window_infer(&self.model, &model_input(s), s.shape, &self.cfg.window)?;
            let (l, d) = volume_loss(&probs, &s.labels, &self.loss)?;
            loss += l;
            dsc += d;
        }
        let n = self.val.len() as f64;
        Ok((loss / n, dsc / n))
    }

    /// Runs up to `epochs` more epochs, stopping early on a validation plateau.
    pub fn run(&mut self, epochs: usize) -> Result<()> {
        let start = Instant::now();
        let target = (self.epochs_done() + epochs).min(self.cfg.max_epochs.max(self.epochs_done()));
        while self.epochs_done() < target {
            let t = Instant::now();
            let epoch = self.epochs_done() + 1;
            let (train_loss, train_dsc) = self.train_epoch(epoch)?;
            let (val_loss, val_dsc) = if epoch % self.cfg.val_every == 0 {
                let (l, d) = self.validate()?;
                (Some(l), Some(d))
            } else {
                (None, None)
            };
            self.history.epochs.push(EpochRecord { epoch, train_loss, train_dsc, val_loss, val_dsc, seconds: t.elapsed().as_secs_f64() });
            if let Some(l) = val_loss {
                if self.history.best_val_loss.is_none_or(|b| l < b) {
                    self.history.best_val_loss = Some(l);
                    self.history.best_epoch = Some(epoch);
                    self.best = self.model.params.clone();
                    self.best_adam = self.adam.clone();
                }
            }
            self.history.wall_seconds += t.elapsed().as_secs_f64();
            if self.history.evals_since_best() >= self.cfg.early_stop_patience {
                self.history.stopped_early = true;
                break;
            }
            if self.cfg.max_seconds.is_some_and(|m| start.elapsed().as_secs_f64() >= m) {
                break;
            }
        }
        Ok(())
    }

    /// Best-validation checkpoint plus the latest parameters.
    pub fn finish(self) -> TrainOutcome {
        let mut cfg = self.cfg;
        cfg.loss = self.loss;
        TrainOutcome {
            checkpoint: Checkpoint {
                model_config: self.model.net.cfg.clone(),
                train_config: Some(cfg),
                history: self.history,
                params: self.best,
                optimizer: Some(self.best_adam),
            },
            last: self.model.params,
        }
    }
}

fn argmax_channels(logits: &Tensor<f32>, vol: usize) -> Vec<u8> {
    let (b, c) = (logits.shape()[0], logits.shape()[1]);
    let d = logits.data();
    let mut out = Vec::with_capacity(b * vol);
    for bi in 0..b {
        for i in 0..vol {
            let mut best = 0;
            for k in 1..c {
                if d[(bi * c + k) * vol + i] > d[(bi * c + best) * vol + i] {
                    best = k;
                }
            }
            out.push(best as u8);
        }
    }
    out
}

/// Trains `model` to completion and returns the best-validation checkpoint.
pub fn train(model: Model<f32>, train_set: &[VolumeSample], val_set: &[VolumeSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut t = Trainer::new(model, train_set, val_set, cfg.clone())?;
    t.run(cfg.max_epochs)?;
    Ok(t.finish())
}
