//! Video scoring, class-level precision tables and leave-out campaigns.

use std::collections::{BTreeMap, BTreeSet};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use stdeep_nn::{sigmoid, Encoder, EncoderError, EncoderSpec, Family, Mode, Scalar};
use thiserror::Error;

use crate::clipper::{self, ClipError, ClipTensor};
use crate::manifest::{CorpusManifest, Label, Split};
use crate::store::VideoStore;
use crate::trainer::{self, TrainConfig, TrainError, TrainOutcome};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Frames or clips per forward pass while scoring.
const SCORE_CHUNK: usize = 16;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("video has no frames")]
    NoFrames,
    #[error("{} test videos have no score, first {}", .0.len(), .0[0])]
    MissingScores(Vec<String>),
    #[error("bad left-out groups: {0}")]
    BadGroups(String),
    #[error("refusing to evaluate on the training manifest {0}")]
    Leakage(String),
    #[error("no frames stored for video {0}")]
    MissingVideo(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Clip(#[from] ClipError),
    #[error(transparent)]
    Train(Box<TrainError>),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl From<TrainError> for EvalError {
    fn from(e: TrainError) -> Self {
        EvalError::Train(Box::new(e))
    }
}

/// Mean of probabilities, summed in sorted order so the result does not
/// depend on the order they were produced in.
pub fn order_free_mean(probs: &mut [f64]) -> f64 {
    probs.sort_by(f64::total_cmp);
    probs.iter().sum::<f64>() / probs.len() as f64
}

/// Sigmoid probabilities of every forward item.
fn probabilities<T: Scalar>(model: &mut Encoder<T>, clips: &[ClipTensor]) -> Result<Vec<f64>, EvalError> {
    let mut out = Vec::new();
    for chunk in clips.chunks(SCORE_CHUNK) {
        let o = model.forward(&ClipTensor::batch::<T>(chunk), Mode::Eval)?;
        out.extend(o.logits.iter().map(|z| sigmoid(z.f64())));
    }
    Ok(out)
}

/// Per-frame probabilities of an image encoder, or per-window probabilities
/// of a video encoder (windows every `stride` frames).
pub fn item_probabilities<T: Scalar>(model: &mut Encoder<T>, frames: &[RgbImage], stride: usize) -> Result<Vec<f64>, EvalError> {
    if frames.is_empty() {
        return Err(EvalError::NoFrames);
    }
    let spec = model.spec().clone();
    let clips: Vec<ClipTensor> = if spec.family == Family::Image2d {
        frames.iter().map(|f| ClipTensor::from_frames(&[f], spec.normalization, spec.resolution)).collect()
    } else {
        let plan = clipper::plan_inference_windows(frames.len(), spec.clip_len, stride)?;
        plan.windows()
            .iter()
            .map(|w| {
                let refs: Vec<&RgbImage> = w.iter().map(|&i| &frames[i]).collect();
                ClipTensor::from_frames(&refs, spec.normalization, spec.resolution)
            })
            .collect()
    };
    probabilities(model, &clips)
}

/// Video-level fake probability: mean over frames (image encoders) or sliding windows.
pub fn score_video<T: Scalar>(model: &mut Encoder<T>, frames: &[RgbImage], stride: usize) -> Result<f64, EvalError> {
    Ok(order_free_mean(&mut item_probabilities(model, frames, stride)?))
}

/// Scores every video of one split.
pub fn score_split<T: Scalar>(
    model: &mut Encoder<T>,
    manifest: &CorpusManifest,
    store: &VideoStore,
    split: Split,
    stride: usize,
) -> Result<BTreeMap<String, f64>, EvalError> {
    let mut scores = BTreeMap::new();
    for r in manifest.split(split) {
        let frames = store.get(&r.id).ok_or_else(|| EvalError::MissingVideo(r.id.clone()))?;
        scores.insert(r.id.clone(), score_video(model, frames, stride)?);
    }
    Ok(scores)
}

/// Percentages per fake method, for reals, and their summaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPrecisionTable {
    /// Fraction of each method's fakes scored above the threshold.
    pub per_method: BTreeMap<String, f64>,
    /// Fraction of reals scored at or below the threshold.
    pub real_acc: f64,
    /// Unweighted mean of `per_method`.
    pub fake_acc: f64,
    /// Mean of `real_acc` and `fake_acc`.
    pub overall_avg: f64,
}

/// Half-up rounding to two decimals, robust to binary representation error.
pub fn round2(x: f64) -> f64 {
    let s = x * 100.0;
    let r = (s.abs() + 0.5 + 1e-9).floor();
    r.copysign(s) / 100.0
}

impl ClassPrecisionTable {
    pub fn from_rates(per_method: BTreeMap<String, f64>, real_acc: f64) -> Self {
        let fake_acc = if per_method.is_empty() {
            f64::NAN
        } else {
            per_method.values().sum::<f64>() / per_method.len() as f64
        };
        Self { per_method, real_acc, fake_acc, overall_avg: 0.5 * (real_acc + fake_acc) }
    }

    /// Every entry rounded half-up to two decimals, as printed in tables.
    pub fn rounded(&self) -> Self {
        Self {
            per_method: self.per_method.iter().map(|(k, v)| (k.clone(), round2(*v))).collect(),
            real_acc: round2(self.real_acc),
            fake_acc: round2(self.fake_acc),
            overall_avg: round2(self.overall_avg),
        }
    }
}

/// Class-level accuracy over the test split.
pub fn class_precision_table(
    scores: &BTreeMap<String, f64>,
    manifest: &CorpusManifest,
    threshold: f64,
) -> Result<ClassPrecisionTable, EvalError> {
    let missing: Vec<String> =
        manifest.split(Split::Test).filter(|r| !scores.contains_key(&r.id)).map(|r| r.id.clone()).collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingScores(missing));
    }
    let mut hits: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let (mut real_ok, mut real_n) = (0usize, 0usize);
    for r in manifest.split(Split::Test) {
        let s = scores[&r.id];
        match r.label {
            Label::Real => {
                real_n += 1;
                real_ok += usize::from(s <= threshold);
            }
            Label::Fake => {
                let e = hits.entry(r.method.clone()).or_default();
                e.0 += usize::from(s > threshold);
                e.1 += 1;
            }
        }
    }
    let pct = |k: usize, n: usize| if n == 0 { f64::NAN } else { 100.0 * k as f64 / n as f64 };
    let per_method = hits.into_iter().map(|(m, (k, n))| (m, pct(k, n))).collect();
    Ok(ClassPrecisionTable::from_rates(per_method, pct(real_ok, real_n)))
}

/// One training run of a campaign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignRun {
    /// Methods withheld from train and val; empty for the baseline.
    pub left_out: Vec<String>,
    pub table: ClassPrecisionTable,
    /// Test videos scored, sorted.
    pub test_ids: Vec<String>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl CampaignRun {
    pub fn label(&self) -> String {
        if self.left_out.is_empty() {
            "all".into()
        } else {
            self.left_out.join("+")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaveOutCampaign {
    pub family: Family,
    pub baseline: CampaignRun,
    pub runs: Vec<CampaignRun>,
    /// `runs[i].overall_avg - baseline.overall_avg`.
    pub drop_per_run: Vec<f64>,
    pub avg_drop: f64,
}

impl LeaveOutCampaign {
    pub fn from_runs(family: Family, baseline: CampaignRun, runs: Vec<CampaignRun>) -> Self {
        let drop_per_run: Vec<f64> = runs.iter().map(|r| r.table.overall_avg - baseline.table.overall_avg).collect();
        let avg_drop = drop_per_run.iter().sum::<f64>() / drop_per_run.len().max(1) as f64;
        Self { family, baseline, runs, drop_per_run, avg_drop }
    }

    /// Number of trained models, baseline included.
    pub fn n_runs(&self) -> usize {
        self.runs.len() + 1
    }

    /// Flat CSV: one row per run and column.
    pub fn to_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["run", "column", "value"])?;
        let drops = std::iter::once(None).chain(self.drop_per_run.iter().copied().map(Some));
        for (run, drop) in std::iter::once(&self.baseline).chain(&self.runs).zip(drops) {
            let label = run.label();
            for (m, v) in &run.table.per_method {
                w.write_record([label.as_str(), m, &format!("{v:.4}")])?;
            }
            w.write_record([label.as_str(), "real", &format!("{:.4}", run.table.real_acc)])?;
            w.write_record([label.as_str(), "fake", &format!("{:.4}", run.table.fake_acc)])?;
            w.write_record([label.as_str(), "avg", &format!("{:.4}", run.table.overall_avg)])?;
            if let Some(d) = drop {
                w.write_record([label.as_str(), "drop", &format!("{d:.4}")])?;
            }
        }
        w.write_record(["summary", "avg_drop", &format!("{:.4}", self.avg_drop)])?;
        let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

/// One group per method.
pub fn singleton_groups(methods: &[String]) -> Vec<Vec<String>> {
    methods.iter().map(|m| vec![m.clone()]).collect()
}

/// Parses `"M1,M4;M2,M3"` into groups.
pub fn parse_groups(s: &str) -> Result<Vec<Vec<String>>, EvalError> {
    let groups: Vec<Vec<String>> = s
        .split(';')
        .map(|g| g.split(',').map(|m| m.trim().to_string()).filter(|m| !m.is_empty()).collect::<Vec<_>>())
        .collect();
    if groups.is_empty() || groups.iter().any(Vec::is_empty) {
        return Err(EvalError::BadGroups(format!("empty group in {s:?}")));
    }
    Ok(groups)
}

/// Groups must be non-empty subsets of the known methods, and no group may
/// withhold every method.
pub fn validate_groups(groups: &[Vec<String>], methods: &[String]) -> Result<(), EvalError> {
    if groups.is_empty() {
        return Err(EvalError::BadGroups("no groups".into()));
    }
    let known: BTreeSet<&String> = methods.iter().collect();
    for g in groups {
        if g.is_empty() {
            return Err(EvalError::BadGroups("empty group".into()));
        }
        if let Some(m) = g.iter().find(|m| !known.contains(m)) {
            return Err(EvalError::BadGroups(format!("unknown method {m}")));
        }
        let set: BTreeSet<&String> = g.iter().collect();
        if set.len() == known.len() {
            return Err(EvalError::BadGroups(format!("group {g:?} leaves no fakes to train on")));
        }
    }
    Ok(())
}

/// Trains any family from its spec. Sequential families first train their
/// image backbone on the same data.
pub fn train_family<T: Scalar>(
    spec: &EncoderSpec,
    manifest: &CorpusManifest,
    store: &VideoStore,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>, TrainError> {
    let mut model = if spec.family.is_sequential() {
        let bb_spec = spec.backbone.as_deref().ok_or_else(|| TrainError::BadConfig("sequential spec needs a backbone".into()))?;
        let mut bb = Encoder::<T>::build(bb_spec)?;
        let bb_cfg = TrainConfig { weight_decay: TrainConfig::for_family(Family::Image2d).weight_decay, ..cfg.clone() };
        let trained = trainer::train(&mut bb, manifest, store, &bb_cfg)?;
        let Encoder::Image2d(net) = trained.best else { unreachable!("backbone spec is image2d") };
        Encoder::build_with_backbone(spec, net)?
    } else {
        Encoder::<T>::build(spec)?
    };
    trainer::train(&mut model, manifest, store, cfg)
}

fn run_one<T: Scalar>(
    spec: &EncoderSpec,
    manifest: &CorpusManifest,
    store: &VideoStore,
    left_out: &[String],
    cfg: &TrainConfig,
    stride: usize,
) -> Result<CampaignRun, EvalError> {
    let m = manifest.exclude_methods(left_out);
    let mut out = train_family::<T>(spec, &m, store, cfg)?;
    let scores = score_split(&mut out.best, &m, store, Split::Test, stride)?;
    Ok(CampaignRun {
        left_out: left_out.to_vec(),
        table: class_precision_table(&scores, &m, DEFAULT_THRESHOLD)?,
        test_ids: scores.keys().cloned().collect(),
        best_epoch: out.best_epoch,
        best_val_loss: out.best_val_loss,
    })
}

/// Baseline on all methods, then one fresh model per withheld group. Every
/// run starts from the same initialization (the spec's seed).
pub fn run_leave_out_campaign<T: Scalar>(
    spec: &EncoderSpec,
    manifest: &CorpusManifest,
    store: &VideoStore,
    groups: &[Vec<String>],
    cfg: &TrainConfig,
) -> Result<LeaveOutCampaign, EvalError> {
    validate_groups(groups, &manifest.methods())?;
    let stride = cfg.val_stride;
    let baseline = run_one::<T>(spec, manifest, store, &[], cfg, stride)?;
    let runs = groups.iter().map(|g| run_one::<T>(spec, manifest, store, g, cfg, stride)).collect::<Result<Vec<_>, _>>()?;
    Ok(LeaveOutCampaign::from_runs(spec.family, baseline, runs))
}

/// Transfer evaluation on a foreign corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossDatasetReport {
    pub source_manifest: String,
    pub target_manifest: String,
    pub table: ClassPrecisionTable,
}

/// Scores the foreign test split without retraining. `source_manifest` is
/// the id of the manifest the model was trained on; evaluating on it is refused.
pub fn cross_dataset_eval<T: Scalar>(
    model: &mut Encoder<T>,
    source_manifest: &str,
    foreign: &CorpusManifest,
    store: &VideoStore,
    stride: usize,
) -> Result<CrossDatasetReport, EvalError> {
    let target = foreign.id();
    if target == source_manifest {
        return Err(EvalError::Leakage(target));
    }
    let scores = score_split(model, foreign, store, Split::Test, stride)?;
    Ok(CrossDatasetReport {
        source_manifest: source_manifest.to_string(),
        target_manifest: target,
        table: class_precision_table(&scores, foreign, DEFAULT_THRESHOLD)?,
    })
}
