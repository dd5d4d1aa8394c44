//! Balanced-batch training with BCE, Adam, LR scheduling and best-validation
//! checkpoint selection.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use stdeep_nn::{sigmoid, Adam, Encoder, EncoderError, Family, Mode, Module, Scalar};
use thiserror::Error;

use crate::clipper::{self, ClipError, ClipTensor};
use crate::evalkit::{self, EvalError};
use crate::manifest::{CorpusManifest, Label, Split};
use crate::seeds::derive_seed;
use crate::store::VideoStore;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("bad manifest: {0}")]
    BadManifest(String),
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("loss diverged at epoch {epoch}: {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("no frames stored for video {0}")]
    MissingVideo(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Clip(#[from] ClipError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Scheduler {
    /// Multiply the rate by `factor` after `patience` epochs without validation improvement.
    Plateau { patience: usize, factor: f64 },
    /// Multiply the rate by `factor` at each listed 0-based epoch.
    Multiplicative { milestones: Vec<usize>, factor: f64 },
}

impl Scheduler {
    pub fn plateau() -> Self {
        Scheduler::Plateau { patience: 5, factor: 0.1 }
    }

    pub fn multiplicative() -> Self {
        Scheduler::Multiplicative { milestones: vec![10], factor: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub scheduler: Scheduler,
    pub max_epochs: usize,
    /// Stop after this many epochs without validation improvement.
    pub early_stop: usize,
    pub augment: bool,
    /// Window stride used to score validation videos.
    pub val_stride: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Desk defaults for a family; weight decay follows the family.
    pub fn for_family(family: Family) -> Self {
        Self {
            lr: 1e-3,
            weight_decay: if family.is_st3d() { 1e-7 } else { 1e-5 },
            batch_size: 8,
            scheduler: Scheduler::plateau(),
            max_epochs: if family == Family::Image2d { 30 } else { 20 },
            early_stop: 10,
            augment: true,
            val_stride: clipper::LONG_STRIDE,
            seed: 0,
        }
    }

    /// Settings of the full-scale pretrained models: small learning rates and
    /// memory-bound batch sizes (8 image, 4 spatio-temporal, 2 recurrent).
    pub fn full_scale(family: Family) -> Self {
        let (lr, batch_size) = if family.is_st3d() {
            (1e-5, 4)
        } else if family.is_sequential() {
            (2e-6, 2)
        } else {
            (1e-4, 8)
        };
        Self { lr, batch_size, max_epochs: 20, ..Self::for_family(family) }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::BadConfig(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return bad(format!("batch_size must be even and positive, got {}", self.batch_size));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        match &self.scheduler {
            Scheduler::Plateau { patience, factor } => {
                if *patience == 0 {
                    return bad("patience must be at least 1".into());
                }
                if !(*factor > 0.0 && *factor < 1.0) {
                    return bad(format!("factor must be in (0, 1), got {factor}"));
                }
            }
            Scheduler::Multiplicative { factor, .. } => {
                if !(*factor > 0.0 && *factor < 1.0) {
                    return bad(format!("factor must be in (0, 1), got {factor}"));
                }
            }
        }
        Ok(())
    }
}

/// Learning-rate state across epochs.
#[derive(Clone, Debug)]
pub struct LrSchedule {
    scheduler: Scheduler,
    lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl LrSchedule {
    pub fn new(scheduler: Scheduler, lr: f64) -> Self {
        Self { scheduler, lr, best: f64::INFINITY, bad_epochs: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Rate for 0-based `epoch`, before it runs.
    pub fn begin_epoch(&mut self, epoch: usize) -> f64 {
        if let Scheduler::Multiplicative { milestones, factor } = &self.scheduler {
            if milestones.contains(&epoch) {
                self.lr *= factor;
            }
        }
        self.lr
    }

    /// Reports an epoch's validation loss.
    pub fn end_epoch(&mut self, val_loss: f64) {
        if val_loss < self.best {
            self.best = val_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if let Scheduler::Plateau { patience, factor } = &self.scheduler {
            if self.bad_epochs >= *patience {
                self.lr *= factor;
                self.bad_epochs = 0;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub id: String,
    pub label: Label,
    pub method: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub entries: Vec<BatchEntry>,
    pub real_count: usize,
    pub fake_count: usize,
}

/// One epoch of half-real, half-fake batches over the train split.
///
/// Fake slots cycle through a shuffled method order so no method dominates;
/// the epoch ends when every real video has been used once, the last batch
/// padded with resampled reals.
pub fn plan_balanced_batches(manifest: &CorpusManifest, batch_size: usize, seed: u64) -> Result<Vec<BatchPlan>, TrainError> {
    if batch_size < 2 || batch_size % 2 != 0 {
        return Err(TrainError::BadConfig(format!("batch_size must be even and positive, got {batch_size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reals: Vec<&str> = manifest.split(Split::Train).filter(|r| r.label == Label::Real).map(|r| r.id.as_str()).collect();
    let mut by_method: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in manifest.split(Split::Train).filter(|r| r.label == Label::Fake) {
        by_method.entry(r.method.as_str()).or_default().push(r.id.as_str());
    }
    if reals.is_empty() {
        return Err(TrainError::BadManifest("train split has no real videos".into()));
    }
    if by_method.is_empty() {
        return Err(TrainError::BadManifest("train split has no fake videos".into()));
    }
    reals.shuffle(&mut rng);
    let mut order: Vec<&str> = by_method.keys().copied().collect();
    order.shuffle(&mut rng);
    let mut pools: BTreeMap<&str, (Vec<&str>, usize)> = BTreeMap::new();
    for (m, ids) in &by_method {
        let mut ids = ids.clone();
        ids.shuffle(&mut rng);
        pools.insert(m, (ids, 0));
    }

    let half = batch_size / 2;
    let mut slot = 0usize;
    let mut batches = Vec::new();
    for chunk in reals.chunks(half) {
        let mut entries: Vec<BatchEntry> =
            chunk.iter().map(|id| BatchEntry { id: id.to_string(), label: Label::Real, method: "real".into() }).collect();
        while entries.len() < half {
            let id = reals[rng.random_range(0..reals.len())];
            entries.push(BatchEntry { id: id.to_string(), label: Label::Real, method: "real".into() });
        }
        for _ in 0..half {
            let m = order[slot % order.len()];
            slot += 1;
            let (ids, cursor) = pools.get_mut(m).expect("method pool");
            if *cursor == ids.len() {
                ids.shuffle(&mut rng);
                *cursor = 0;
            }
            entries.push(BatchEntry { id: ids[*cursor].to_string(), label: Label::Fake, method: m.to_string() });
            *cursor += 1;
        }
        batches.push(BatchPlan { entries, real_count: half, fake_count: half });
    }
    Ok(batches)
}

/// Mean binary cross-entropy of logits, probabilities clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(logits: &[f64], labels: &[f64]) -> f64 {
    assert_eq!(logits.len(), labels.len(), "one label per logit");
    let n = logits.len().max(1) as f64;
    logits.iter().zip(labels).map(|(&z, &y)| bce_prob(sigmoid(z), y)).sum::<f64>() / n
}

/// BCE of one probability.
pub fn bce_prob(p: f64, y: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Gradient of [`bce_loss`] with respect to each logit.
pub fn bce_grad(logits: &[f64], labels: &[f64]) -> Vec<f64> {
    let n = logits.len().max(1) as f64;
    logits.iter().zip(labels).map(|(&z, &y)| (sigmoid(z) - y) / n).collect()
}

/// Class-balanced log-loss of video probabilities: the mean of the per-class means.
pub fn balanced_log_loss(probs: &[(f64, Label)]) -> f64 {
    let class = |l: Label| {
        let v: Vec<f64> = probs.iter().filter(|p| p.1 == l).map(|p| bce_prob(p.0, l.target())).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    match (class(Label::Real), class(Label::Fake)) {
        (Some(a), Some(b)) => 0.5 * (a + b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => f64::NAN,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Encoder state at the epoch with the lowest validation loss.
    pub best: Encoder<T>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub log: Vec<EpochLog>,
}

impl<T> TrainOutcome<T> {
    pub fn final_train_loss(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |l| l.train_loss)
    }

    /// Writes the per-epoch log as JSON lines.
    pub fn write_log(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        for l in &self.log {
            writeln!(f, "{}", serde_json::to_string(l).expect("log serializes"))?;
        }
        Ok(())
    }
}

/// Builds the input clip of one batch entry. Image encoders train on a single
/// random frame, video encoders on a random window.
fn training_clip<T: Scalar>(
    model: &Encoder<T>,
    frames: &[image::RgbImage],
    seed: u64,
    augment: bool,
) -> Result<ClipTensor, TrainError> {
    let spec = model.spec();
    let len = if model.family() == Family::Image2d { 1 } else { spec.clip_len };
    let idx = if len == 1 {
        if frames.is_empty() {
            return Err(ClipError::NoFrames.into());
        }
        vec![ChaCha8Rng::seed_from_u64(seed).random_range(0..frames.len())]
    } else {
        clipper::sample_training_window(frames.len(), len, seed)?
    };
    let mut picked: Vec<image::RgbImage> = idx.iter().map(|&i| frames[i].clone()).collect();
    if augment {
        picked = clipper::augment(&picked, derive_seed(seed, &["augment"]));
    }
    let refs: Vec<&image::RgbImage> = picked.iter().collect();
    Ok(ClipTensor::from_frames(&refs, spec.normalization, spec.resolution))
}

/// Class-balanced validation log-loss of video-level scores.
pub fn validation_loss<T: Scalar>(
    model: &mut Encoder<T>,
    manifest: &CorpusManifest,
    store: &VideoStore,
    stride: usize,
) -> Result<f64, TrainError> {
    let mut probs = Vec::new();
    for r in manifest.split(Split::Val) {
        let frames = store.get(&r.id).ok_or_else(|| TrainError::MissingVideo(r.id.clone()))?;
        probs.push((evalkit::score_video(model, frames, stride)?, r.label));
    }
    if probs.is_empty() {
        return Err(TrainError::BadManifest("validation split is empty".into()));
    }
    Ok(balanced_log_loss(&probs))
}

/// Trains `model` in place and returns the best-validation snapshot.
pub fn train<T: Scalar>(
    model: &mut Encoder<T>,
    manifest: &CorpusManifest,
    store: &VideoStore,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>, TrainError> {
    cfg.validate()?;
    if manifest.split(Split::Val).next().is_none() {
        return Err(TrainError::BadManifest("validation split is empty".into()));
    }
    model.reseed_dropout(derive_seed(cfg.seed, &["dropout"]));
    let mut opt = Adam::new(cfg.lr, cfg.weight_decay);
    let mut sched = LrSchedule::new(cfg.scheduler.clone(), cfg.lr);
    let mut log = Vec::new();
    let mut best: Option<(Encoder<T>, usize, f64)> = None;
    let mut since_best = 0usize;

    for epoch in 0..cfg.max_epochs {
        let lr = sched.begin_epoch(epoch);
        opt.lr = lr;
        let epoch_tag = epoch.to_string();
        let plan = plan_balanced_batches(manifest, cfg.batch_size, derive_seed(cfg.seed, &["batches", &epoch_tag]))?;
        let mut losses = Vec::with_capacity(plan.len());
        for (b, batch) in plan.iter().enumerate() {
            let mut clips = Vec::with_capacity(batch.entries.len());
            let mut labels = Vec::with_capacity(batch.entries.len());
            for (k, e) in batch.entries.iter().enumerate() {
                let frames = store.get(&e.id).ok_or_else(|| TrainError::MissingVideo(e.id.clone()))?;
                let counter = format!("{b}:{k}");
                let seed = derive_seed(cfg.seed, &["clip", &epoch_tag, &e.id, &counter]);
                clips.push(training_clip(model, frames, seed, cfg.augment)?);
                labels.push(e.label.target());
            }
            let x = ClipTensor::batch::<T>(&clips);
            let out = model.forward(&x, Mode::Train)?;
            let logits: Vec<f64> = out.logits.iter().map(|z| z.f64()).collect();
            let loss = bce_loss(&logits, &labels);
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch, loss });
            }
            let grad: Vec<T> = bce_grad(&logits, &labels).into_iter().map(T::c).collect();
            model.zero_grad();
            model.backward(&grad);
            opt.step(model);
            losses.push(loss);
        }
        let train_loss = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
        let val_loss = validation_loss(model, manifest, store, cfg.val_stride)?;
        if !val_loss.is_finite() {
            return Err(TrainError::Diverged { epoch, loss: val_loss });
        }
        log.push(EpochLog { epoch, train_loss, val_loss, lr });
        sched.end_epoch(val_loss);
        if best.as_ref().is_none_or(|b| val_loss < b.2) {
            best = Some((model.clone(), epoch, val_loss));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop {
                break;
            }
        }
    }
    let (best, best_epoch, best_val_loss) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { best, best_epoch, best_val_loss, log })
}
