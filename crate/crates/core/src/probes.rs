//! Analysis probes: temporal perturbation battery, penultimate features with
//! a t-SNE embedding, and Grad-CAM maps.

use std::collections::BTreeMap;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use stdeep_nn::{sigmoid, Encoder, EncoderError, EncoderSpec, Family, Mode, Scalar, Tensor};
use thiserror::Error;

use crate::clipper::{self, ClipTensor};
use crate::evalkit::order_free_mean;
use crate::manifest::{Label, VideoRecord};
use crate::seeds::derive_seed;
use crate::store::VideoStore;
use crate::trainer::bce_prob;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("cannot flip {n} of {len} frames")]
    BadN { n: usize, len: usize },
    #[error("embedding needs at least {need} rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("model has no convolutional activation block")]
    NoConvBlock,
    #[error("no frames stored for video {0}")]
    MissingVideo(String),
    #[error("empty input")]
    Empty,
    #[error(transparent)]
    Encoder(EncoderError),
}

impl From<EncoderError> for ProbeError {
    fn from(e: EncoderError) -> Self {
        match e {
            EncoderError::NoConvBlock => ProbeError::NoConvBlock,
            other => ProbeError::Encoder(other),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "n")]
pub enum Perturbation {
    /// Mirror `n` distinct, uniformly chosen frames.
    FlipNRandom(usize),
    /// Mirror frames at odd 0-based indices.
    FlipEvery2nd,
    /// Uniformly random reordering.
    Shuffle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: Perturbation,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn label(&self) -> String {
        match self.kind {
            Perturbation::FlipNRandom(0) => "original".into(),
            Perturbation::FlipNRandom(n) => format!("flip_{n}"),
            Perturbation::FlipEvery2nd => "flip_every_2nd".into(),
            Perturbation::Shuffle => "shuffle".into(),
        }
    }

    /// New frame order and per-output-frame mirror flags for a clip of `len`.
    pub fn plan(&self, len: usize) -> Result<(Vec<usize>, Vec<bool>), ProbeError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let identity: Vec<usize> = (0..len).collect();
        Ok(match self.kind {
            Perturbation::FlipNRandom(n) => {
                if n > len {
                    return Err(ProbeError::BadN { n, len });
                }
                let mut flips = vec![false; len];
                for i in rand::seq::index::sample(&mut rng, len, n) {
                    flips[i] = true;
                }
                (identity, flips)
            }
            Perturbation::FlipEvery2nd => (identity, (0..len).map(|i| i % 2 == 1).collect()),
            Perturbation::Shuffle => {
                let mut order = identity;
                order.shuffle(&mut rng);
                (order, vec![false; len])
            }
        })
    }
}

/// The default battery after the unaltered column: flip 1, 3, 5, every 2nd, shuffle.
pub fn default_battery(seed: u64) -> Vec<PerturbationSpec> {
    [Perturbation::FlipNRandom(1), Perturbation::FlipNRandom(3), Perturbation::FlipNRandom(5), Perturbation::FlipEvery2nd, Perturbation::Shuffle]
        .into_iter()
        .map(|kind| PerturbationSpec { kind, seed })
        .collect()
}

pub fn perturb(frames: &[RgbImage], spec: &PerturbationSpec) -> Result<Vec<RgbImage>, ProbeError> {
    let (order, flips) = spec.plan(frames.len())?;
    Ok(order
        .iter()
        .zip(&flips)
        .map(|(&i, &f)| if f { image::imageops::flip_horizontal(&frames[i]) } else { frames[i].clone() })
        .collect())
}

/// Fake probability of one clip: the clip logit for video encoders, the
/// order-free mean of frame probabilities for image encoders.
pub fn clip_probability<T: Scalar>(model: &mut Encoder<T>, frames: &[RgbImage]) -> Result<f64, ProbeError> {
    if frames.is_empty() {
        return Err(ProbeError::Empty);
    }
    let spec = model.spec().clone();
    let refs: Vec<&RgbImage> = frames.iter().collect();
    let clip = ClipTensor::from_frames(&refs, spec.normalization, spec.resolution);
    let out = model.forward(&ClipTensor::batch::<T>(&[clip]), Mode::Eval)?;
    let mut probs: Vec<f64> = out.logits.iter().map(|z| sigmoid(z.f64())).collect();
    Ok(order_free_mean(&mut probs))
}

/// A labeled probe sample: the first `clip_len` frames of a video.
#[derive(Clone, Debug)]
pub struct ProbeSample {
    pub id: String,
    pub label: Label,
    pub frames: Vec<RgbImage>,
}

/// Frames per probe clip: the model's clip length for video encoders, the
/// default window for image encoders, which score any number of frames.
pub fn probe_clip_len(spec: &EncoderSpec) -> usize {
    if spec.family.is_video() {
        spec.clip_len
    } else {
        clipper::DEFAULT_CLIP_LEN
    }
}

/// First `clip_len` frames of each record, looped if short.
pub fn probe_samples(records: &[&VideoRecord], store: &VideoStore, clip_len: usize) -> Result<Vec<ProbeSample>, ProbeError> {
    records
        .iter()
        .map(|r| {
            let frames = store.get(&r.id).filter(|f| !f.is_empty()).ok_or_else(|| ProbeError::MissingVideo(r.id.clone()))?;
            let idx = clipper::looped(frames.len(), 0, clip_len);
            Ok(ProbeSample { id: r.id.clone(), label: r.label, frames: idx.iter().map(|&i| frames[i].clone()).collect() })
        })
        .collect()
}

/// Per-class mean log-loss, one column per battery entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub family: Family,
    /// `original` first, then the battery.
    pub columns: Vec<String>,
    /// `real` / `fake` to losses aligned with `columns`.
    pub per_class_logloss: BTreeMap<String, Vec<f64>>,
    pub baseline_logloss: BTreeMap<String, f64>,
    pub n_samples: BTreeMap<String, usize>,
}

impl ProbeReport {
    pub fn column(&self, class: Label, name: &str) -> Option<f64> {
        let i = self.columns.iter().position(|c| c == name)?;
        self.per_class_logloss.get(class.as_str()).map(|v| v[i])
    }
}

/// Runs the unaltered clips and every perturbation. Each sample gets its own
/// perturbation draw, keyed by the spec seed and the video id.
pub fn run_perturbation_battery<T: Scalar>(
    model: &mut Encoder<T>,
    samples: &[ProbeSample],
    specs: &[PerturbationSpec],
) -> Result<ProbeReport, ProbeError> {
    let mut all = vec![PerturbationSpec { kind: Perturbation::FlipNRandom(0), seed: 0 }];
    all.extend_from_slice(specs);
    let mut sums: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for s in samples {
        let class = s.label.as_str().to_string();
        *counts.entry(class.clone()).or_default() += 1;
        let row = sums.entry(class).or_insert_with(|| vec![0.0; all.len()]);
        for (k, spec) in all.iter().enumerate() {
            let own = PerturbationSpec { kind: spec.kind, seed: derive_seed(spec.seed, &[&s.id]) };
            let p = clip_probability(model, &perturb(&s.frames, &own)?)?;
            row[k] += bce_prob(p, s.label.target());
        }
    }
    let per_class_logloss: BTreeMap<String, Vec<f64>> =
        sums.into_iter().map(|(c, v)| { let n = counts[&c] as f64; (c, v.into_iter().map(|x| x / n).collect()) }).collect();
    Ok(ProbeReport {
        family: model.family(),
        columns: all.iter().map(PerturbationSpec::label).collect(),
        baseline_logloss: per_class_logloss.iter().map(|(c, v)| (c.clone(), v[0])).collect(),
        per_class_logloss,
        n_samples: counts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub id: String,
    pub label: Label,
    pub method: String,
    pub features: Vec<f64>,
}

/// Penultimate features of one video. Video encoders see the first clip;
/// image encoders average the features of every frame.
pub fn video_features<T: Scalar>(model: &mut Encoder<T>, frames: &[RgbImage]) -> Result<Vec<f64>, ProbeError> {
    if frames.is_empty() {
        return Err(ProbeError::Empty);
    }
    let spec = model.spec().clone();
    let picked: Vec<&RgbImage> = if spec.family == Family::Image2d {
        frames.iter().collect()
    } else {
        clipper::looped(frames.len(), 0, spec.clip_len).into_iter().map(|i| &frames[i]).collect()
    };
    let clip = ClipTensor::from_frames(&picked, spec.normalization, spec.resolution);
    let out = model.forward(&ClipTensor::batch::<T>(&[clip]), Mode::Eval)?;
    let f = &out.features;
    let (rows, d) = (f.dim(0), f.len() / f.dim(0));
    Ok((0..d).map(|j| (0..rows).map(|r| f.data()[r * d + j].f64()).sum::<f64>() / rows as f64).collect())
}

pub fn extract_features<T: Scalar>(
    model: &mut Encoder<T>,
    records: &[&VideoRecord],
    store: &VideoStore,
) -> Result<Vec<FeatureRow>, ProbeError> {
    records
        .iter()
        .map(|r| {
            let frames = store.get(&r.id).ok_or_else(|| ProbeError::MissingVideo(r.id.clone()))?;
            Ok(FeatureRow { id: r.id.clone(), label: r.label, method: r.method.clone(), features: video_features(model, frames)? })
        })
        .collect()
}

/// Optimizer schedule of the embedding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 40.0,
            iterations: 2500,
            learning_rate: 200.0,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            momentum: 0.5,
            final_momentum: 0.8,
            seed: 0,
        }
    }
}

/// Conditional affinities of row `i` with precision found by bisection so
/// that the entropy matches `ln(perplexity)`.
fn row_affinities(d2: &[f64], i: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
    let mut p = vec![0.0; d2.len()];
    for _ in 0..200 {
        let mut sum = 0.0;
        for (j, &d) in d2.iter().enumerate() {
            p[j] = if j == i { 0.0 } else { (-beta * d).exp() };
            sum += p[j];
        }
        if sum <= 0.0 {
            // Every neighbor is too far for this precision: loosen it.
            hi = beta;
            beta = (lo + hi) / 2.0;
            continue;
        }
        let mut h = 0.0;
        for (j, pj) in p.iter_mut().enumerate() {
            *pj /= sum;
            if j != i && *pj > 0.0 {
                h -= *pj * pj.ln();
            }
        }
        let diff = h - target;
        if diff.abs() < 1e-5 {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
    }
    p
}

/// Exact t-SNE to two dimensions.
///
/// Exact duplicate rows are embedded once and share their point. When fewer
/// than `3 * perplexity` distinct rows remain the perplexity is lowered to fit.
pub fn embed_2d(rows: &[Vec<f64>], params: &TsneParams) -> Result<Vec<[f64; 2]>, ProbeError> {
    let need = (3.0 * params.perplexity).ceil() as usize;
    if rows.len() < need.max(2) {
        return Err(ProbeError::TooFewRows { need: need.max(2), got: rows.len() });
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let cmp = |a: &Vec<f64>, b: &Vec<f64>| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(a.len().cmp(&b.len()));
    order.sort_by(|&i, &j| cmp(&rows[i], &rows[j]).then(i.cmp(&j)));
    let mut slot = vec![0usize; rows.len()];
    let mut unique: Vec<&Vec<f64>> = Vec::new();
    for (k, &i) in order.iter().enumerate() {
        if k == 0 || cmp(&rows[order[k - 1]], &rows[i]).is_ne() {
            unique.push(&rows[i]);
        }
        slot[i] = unique.len() - 1;
    }
    // Keep the embedding independent of the sort: optimize distinct rows in first-seen order.
    let mut first_seen: Vec<usize> = Vec::new();
    let mut remap = vec![usize::MAX; unique.len()];
    for &s in &slot {
        if remap[s] == usize::MAX {
            remap[s] = first_seen.len();
            first_seen.push(s);
        }
    }
    let distinct: Vec<&Vec<f64>> = first_seen.iter().map(|&s| unique[s]).collect();
    if distinct.len() == 1 {
        return Ok(vec![[0.0; 2]; rows.len()]);
    }
    let perplexity = params.perplexity.min((distinct.len() as f64 - 1.0) / 3.0).max(1.0);
    let y = tsne(&distinct, &TsneParams { perplexity, ..*params });
    Ok(slot.iter().map(|&s| y[remap[s]]).collect())
}

fn tsne(rows: &[&Vec<f64>], params: &TsneParams) -> Vec<[f64; 2]> {
    let n = rows.len();
    let mut d2 = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = rows[i].iter().zip(rows[j].iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            d2[i * n + j] = d;
            d2[j * n + i] = d;
        }
    }
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let r = row_affinities(&d2[i * n..(i + 1) * n], i, params.perplexity);
        p[i * n..(i + 1) * n].copy_from_slice(&r);
    }
    let mut sym = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sym[i * n + j] = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [1e-2 * rng.sample::<f64, _>(StandardNormal), 1e-2 * rng.sample::<f64, _>(StandardNormal)]).collect();
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    for it in 0..params.iterations {
        let exag = if it < params.exaggeration_iters { params.exaggeration } else { 1.0 };
        let mom = if it < params.exaggeration_iters { params.momentum } else { params.final_momentum };
        let mut z = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let q = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = q;
                num[j * n + i] = q;
                z += 2.0 * q;
            }
        }
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = num[i * n + j];
                let m = (exag * sym[i * n + j] - (q / z).max(1e-12)) * q;
                g[0] += m * (y[i][0] - y[j][0]);
                g[1] += m * (y[i][1] - y[j][1]);
            }
            for k in 0..2 {
                let grad = 4.0 * g[k];
                gains[i][k] = if (grad > 0.0) != (update[i][k] > 0.0) { gains[i][k] + 0.2 } else { (gains[i][k] * 0.8).max(0.01) };
                update[i][k] = mom * update[i][k] - params.learning_rate * gains[i][k] * grad;
            }
        }
        for i in 0..n {
            y[i][0] += update[i][0];
            y[i][1] += update[i][1];
        }
        let mean = [y.iter().map(|p| p[0]).sum::<f64>() / n as f64, y.iter().map(|p| p[1]).sum::<f64>() / n as f64];
        y.iter_mut().for_each(|p| {
            p[0] -= mean[0];
            p[1] -= mean[1];
        });
    }
    y
}

/// Grad-CAM heatmaps, one per input frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationMap {
    pub width: usize,
    pub height: usize,
    /// Per-frame `height * width` maps in `[0, 1]`.
    pub heatmaps: Vec<Vec<f32>>,
    /// Fake probability of the clip.
    pub prediction: f64,
    /// Maximum of the rectified map before normalization.
    pub raw_max: f64,
}

impl ActivationMap {
    pub fn frame_mean(&self, t: usize) -> f64 {
        self.heatmaps[t].iter().map(|&v| v as f64).sum::<f64>() / self.heatmaps[t].len() as f64
    }
}

/// Rectified channel-weighted activation for one `[C, T, h, w]` slab.
fn cam_volume<T: Scalar>(a: &[T], g: &[T], c: usize, thw: usize) -> Vec<f64> {
    let mut cam = vec![0.0; thw];
    for ci in 0..c {
        let gs = &g[ci * thw..(ci + 1) * thw];
        let alpha = gs.iter().map(|v| v.f64()).sum::<f64>() / thw as f64;
        if alpha == 0.0 {
            continue;
        }
        for (o, v) in cam.iter_mut().zip(&a[ci * thw..(ci + 1) * thw]) {
            *o += alpha * v.f64();
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    cam
}

/// Bilinear resize of an `h x w` map (pixel centers aligned).
fn bilinear(map: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; oh * ow];
    for y in 0..oh {
        let sy = (((y as f64 + 0.5) * h as f64 / oh as f64) - 0.5).clamp(0.0, (h - 1) as f64);
        let (y0, fy) = (sy.floor() as usize, sy - sy.floor());
        let y1 = (y0 + 1).min(h - 1);
        for x in 0..ow {
            let sx = (((x as f64 + 0.5) * w as f64 / ow as f64) - 0.5).clamp(0.0, (w - 1) as f64);
            let (x0, fx) = (sx.floor() as usize, sx - sx.floor());
            let x1 = (x0 + 1).min(w - 1);
            let top = map[y0 * w + x0] * (1.0 - fx) + map[y0 * w + x1] * fx;
            let bot = map[y1 * w + x0] * (1.0 - fx) + map[y1 * w + x1] * fx;
            out[y * ow + x] = (top * (1.0 - fy) + bot * fy) as f32;
        }
    }
    out
}

/// Grad-CAM for the fake logit. 3-D maps are upsampled nearest in time and
/// bilinear in space; the whole clip is normalized by its maximum.
pub fn grad_cam<T: Scalar>(model: &mut Encoder<T>, frames: &[RgbImage]) -> Result<ActivationMap, ProbeError> {
    if frames.is_empty() {
        return Err(ProbeError::Empty);
    }
    if model.family().is_sequential() {
        return Err(ProbeError::NoConvBlock);
    }
    let spec = model.spec().clone();
    let refs: Vec<&RgbImage> = frames.iter().collect();
    let clip = ClipTensor::from_frames(&refs, spec.normalization, spec.resolution);
    let out = model.forward(&ClipTensor::batch::<T>(&[clip]), Mode::Eval)?;
    let mut probs: Vec<f64> = out.logits.iter().map(|z| sigmoid(z.f64())).collect();
    let prediction = order_free_mean(&mut probs);
    let ones = vec![T::one(); out.logits.len()];
    let (act, grad) = model.activation_and_grad(&ones)?;
    Ok(cam_from_activation(&act, &grad, frames.len(), spec.resolution, prediction))
}

/// Maps `[N, C, T', h, w]` activations and gradients to `len` frame heatmaps.
/// Image encoders yield `N = len` single-frame slabs; 3-D encoders one slab.
pub fn cam_from_activation<T: Scalar>(act: &Tensor<T>, grad: &Tensor<T>, len: usize, res: usize, prediction: f64) -> ActivationMap {
    let s = act.shape();
    let (n, c, t, h, w) = (s[0], s[1], s[2], s[3], s[4]);
    let thw = t * h * w;
    let mut slabs: Vec<Vec<f64>> = Vec::new();
    for b in 0..n {
        let off = b * c * thw;
        let cam = cam_volume(&act.data()[off..off + c * thw], &grad.data()[off..off + c * thw], c, thw);
        for ti in 0..t {
            slabs.push(cam[ti * h * w..(ti + 1) * h * w].to_vec());
        }
    }
    let total = slabs.len();
    let mut heatmaps: Vec<Vec<f32>> =
        (0..len).map(|i| bilinear(&slabs[(i * total / len).min(total - 1)], h, w, res, res)).collect();
    let raw_max = heatmaps.iter().flatten().fold(0.0f32, |m, &v| m.max(v)) as f64;
    if raw_max > 0.0 {
        heatmaps.iter_mut().flatten().for_each(|v| *v /= raw_max as f32);
    }
    ActivationMap { width: res, height: res, heatmaps, prediction, raw_max }
}

fn jet(v: f32) -> [f32; 3] {
    let f = |x: f32| (1.5 - (4.0 * v - x).abs()).clamp(0.0, 1.0);
    [f(3.0), f(2.0), f(1.0)]
}

/// Two-row strip: frames on top, heatmap overlays below.
pub fn cam_strip(frames: &[RgbImage], map: &ActivationMap) -> RgbImage {
    let (w, h) = (map.width as u32, map.height as u32);
    let mut strip = RgbImage::new(w * frames.len() as u32, 2 * h);
    for (t, f) in frames.iter().enumerate() {
        let f = clipper::resize_to(f, map.width);
        let x0 = t as u32 * w;
        for y in 0..h {
            for x in 0..w {
                let p = f.get_pixel(x, y).0;
                strip.put_pixel(x0 + x, y, Rgb(p));
                let c = jet(map.heatmaps[t][(y * w + x) as usize]);
                strip.put_pixel(x0 + x, h + y, Rgb(std::array::from_fn(|k| (0.5 * p[k] as f32 + 127.5 * c[k]).round() as u8)));
            }
        }
    }
    strip
}

const PALETTE: [[u8; 3]; 6] = [[31, 119, 180], [214, 39, 40], [44, 160, 44], [255, 127, 14], [148, 103, 189], [140, 86, 75]];

/// Scatter plot of embedded points colored by group (first group first in the palette).
pub fn scatter_plot(points: &[[f64; 2]], groups: &[String], size: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(size, size, Rgb([255, 255, 255]));
    if points.is_empty() {
        return img;
    }
    let mut names: Vec<&String> = groups.iter().collect();
    names.sort();
    names.dedup();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let pad = 8.0;
    let span = size as f64 - 2.0 * pad;
    for (p, g) in points.iter().zip(groups) {
        let color = PALETTE[names.iter().position(|n| *n == g).unwrap_or(0) % PALETTE.len()];
        let px = |k: usize| pad + span * (p[k] - lo[k]) / (hi[k] - lo[k]).max(1e-12);
        let (cx, cy) = (px(0) as i64, size as i64 - 1 - px(1) as i64);
        for dy in -2..=2 {
            for dx in -2..=2 {
                let (x, y) = (cx + dx, cy + dy);
                if x >= 0 && y >= 0 && x < size as i64 && y < size as i64 {
                    img.put_pixel(x as u32, y as u32, Rgb(color));
                }
            }
        }
    }
    img
}
