//! Procedural desk-scale corpus: moving face proxies as "real" videos and four
//! artifact families as "fake" methods.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::facepipe::{self, BoundingBox, FaceError, FaceTrack, OutlierParams, SyntheticDetector};
use crate::manifest::{CorpusManifest, Label, ManifestError, Split, VideoRecord, REAL_METHOD};
use crate::seeds::derive_seed;
use crate::store::VideoStore;

pub const SOURCE_FPS: f64 = 30.0;
pub const MOTION_HEAVY: &str = "motion_heavy";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
    #[error("a video needs at least 16 frames, got {0}")]
    TooFewFrames(usize),
    #[error("empty frame sequence")]
    Empty,
    #[error("bad corpus config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Face(#[from] FaceError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Float RGB image, interleaved, nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl FloatImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, v: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&v);
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at integers), edge-clamped.
    pub fn sample(&self, x: f64, y: f64) -> [f32; 3] {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = ((x - x0 as f64) as f32, (y - y0 as f64) as f32);
        let (a, b, c, d) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
        std::array::from_fn(|k| {
            let top = a[k] + (b[k] - a[k]) * fx;
            let bot = c[k] + (d[k] - c[k]) * fx;
            top + (bot - top) * fy
        })
    }
}

/// Face ellipse in crop coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceRegion {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

impl FaceRegion {
    /// Approximate signed distance in pixels to the ellipse scaled by `k` (negative inside).
    fn signed_dist(&self, x: f64, y: f64, k: f64) -> f64 {
        let u = (x - self.cx) / (self.rx * k);
        let v = (y - self.cy) / (self.ry * k);
        ((u * u + v * v).sqrt() - 1.0) * (self.rx.min(self.ry) * k)
    }

    /// Anti-aliased coverage of the scaled ellipse at a pixel center.
    fn coverage(&self, x: f64, y: f64, k: f64) -> f32 {
        (0.5 - self.signed_dist(x, y, k)).clamp(0.0, 1.0) as f32
    }
}

/// Fixed per-pixel blend applied after brightness.
#[derive(Clone, Debug, PartialEq)]
pub struct Overlay {
    pub alpha: Vec<f32>,
    pub values: FloatImage,
}

/// A generated video kept in latent form: brightness-free face crops, the
/// global brightness series, and an optional static overlay.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthVideo {
    pub size: usize,
    /// Source-frame index of every sampled frame.
    pub frame_indices: Vec<usize>,
    pub base: Vec<FloatImage>,
    /// Additive global brightness per frame.
    pub brightness: Vec<f64>,
    /// Stationary standard deviation of the brightness process.
    pub sigma: f64,
    pub face: Vec<FaceRegion>,
    pub overlay: Option<Overlay>,
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl SynthVideo {
    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    /// Final float frame `t` before quantization.
    pub fn frame(&self, t: usize) -> FloatImage {
        let mut f = self.base[t].clone();
        let b = self.brightness[t] as f32;
        f.data.iter_mut().for_each(|v| *v = (*v + b).clamp(0.0, 1.0));
        if let Some(o) = &self.overlay {
            for (p, &a) in o.alpha.iter().enumerate() {
                if a > 0.0 {
                    for k in 0..3 {
                        let i = p * 3 + k;
                        f.data[i] = (1.0 - a) * f.data[i] + a * o.values.data[i];
                    }
                }
            }
        }
        f
    }

    /// 8-bit RGB frames.
    pub fn render(&self) -> Vec<RgbImage> {
        (0..self.len())
            .map(|t| {
                let f = self.frame(t);
                let bytes = f.data.iter().map(|&v| quantize(v)).collect();
                RgbImage::from_raw(self.size as u32, self.size as u32, bytes).expect("buffer matches dimensions")
            })
            .collect()
    }
}

/// Scene knobs for real videos.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    /// Output crop side in pixels.
    pub size: usize,
    /// Stationary std of the global brightness process.
    pub sigma: f64,
    /// Lag-1 coefficient of the brightness process.
    pub rho: f64,
    /// Face motion amplitude as a fraction of the crop side.
    pub motion: f64,
    /// Upper bound of the motion frequency in Hz.
    pub motion_freq: f64,
}

impl SceneParams {
    pub fn new(size: usize) -> Self {
        Self { size, sigma: 0.08, rho: 0.9, motion: 0.08, motion_freq: 0.15 }
    }

    /// Elevated motion used for the `motion_heavy` subset.
    pub fn motion_heavy(size: usize) -> Self {
        Self { motion: 0.2, motion_freq: 0.3, ..Self::new(size) }
    }
}

struct Sinusoid {
    amp: f64,
    kx: f64,
    ky: f64,
    phase: f64,
}

impl Sinusoid {
    fn random(rng: &mut impl Rng, amp: f64, max_freq: f64) -> Self {
        let angle = rng.random::<f64>() * 2.0 * PI;
        let f = (0.5 + rng.random::<f64>()) * max_freq;
        Self { amp: amp * (0.5 + rng.random::<f64>()), kx: f * angle.cos(), ky: f * angle.sin(), phase: rng.random::<f64>() * 2.0 * PI }
    }

    fn eval(&self, x: f64, y: f64) -> f64 {
        self.amp * (2.0 * PI * (self.kx * x + self.ky * y) + self.phase).sin()
    }
}

/// Per-video appearance of the face proxy and background.
struct Appearance {
    skin: [f64; 3],
    light: f64,
    skin_tex: Vec<[Sinusoid; 3]>,
    bg: [f64; 3],
    bg_tex: Vec<[Sinusoid; 3]>,
    eye_color: [f64; 3],
    mouth_color: [f64; 3],
}

impl Appearance {
    fn random(rng: &mut impl Rng) -> Self {
        let u = |rng: &mut dyn rand::RngCore, lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
        let tone = u(rng, 0.45, 0.62);
        let skin = [tone + 0.06, tone - 0.02, tone - 0.07];
        let skin_tex = (0..3).map(|_| std::array::from_fn(|_| Sinusoid::random(rng, 0.02, 3.0))).collect();
        let bg = [u(rng, 0.35, 0.65), u(rng, 0.35, 0.65), u(rng, 0.35, 0.65)];
        let bg_tex = (0..4).map(|_| std::array::from_fn(|_| Sinusoid::random(rng, 0.035, 4.0))).collect();
        Self {
            skin,
            light: u(rng, 0.05, 0.09),
            skin_tex,
            bg,
            bg_tex,
            eye_color: [u(rng, 0.25, 0.32), u(rng, 0.25, 0.3), u(rng, 0.25, 0.3)],
            mouth_color: [u(rng, 0.42, 0.5), u(rng, 0.27, 0.32), u(rng, 0.27, 0.32)],
        }
    }

    /// Background at scene coordinates normalized by the canvas side.
    fn background(&self, x: f64, y: f64) -> [f64; 3] {
        std::array::from_fn(|c| self.bg[c] + self.bg_tex.iter().map(|s| s[c].eval(x, y)).sum::<f64>())
    }

    /// Face color at normalized face coordinates (u, v) in the unit disc.
    /// Features are deliberately asymmetric so horizontal mirroring is visible.
    fn face(&self, u: f64, v: f64, px: f64) -> [f64; 3] {
        let mut c: [f64; 3] =
            std::array::from_fn(|k| self.skin[k] - self.light * u + self.skin_tex.iter().map(|s| s[k].eval(u, v)).sum::<f64>());
        let disc = |cu: f64, cv: f64, ru: f64, rv: f64| {
            let d = (((u - cu) / ru).powi(2) + ((v - cv) / rv).powi(2)).sqrt();
            ((1.0 - d) * ru.min(rv) / px + 0.5).clamp(0.0, 1.0)
        };
        let mix = |c: &mut [f64; 3], col: [f64; 3], a: f64| {
            for k in 0..3 {
                c[k] += a * (col[k] - c[k]);
            }
        };
        mix(&mut c, self.eye_color, disc(-0.36, -0.22, 0.17, 0.12));
        mix(&mut c, self.eye_color, disc(0.34, -0.2, 0.11, 0.08));
        mix(&mut c, self.eye_color, disc(-0.38, -0.45, 0.2, 0.05));
        mix(&mut c, self.mouth_color, disc(0.14, 0.45, 0.34, 0.09));
        mix(&mut c, self.eye_color, disc(-0.5, 0.18, 0.07, 0.07));
        c
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// AR(1) series with stationary marginal `N(0, sigma^2)` from the first step on.
pub fn ar1_series(rng: &mut impl Rng, n: usize, rho: f64, sigma: f64) -> Vec<f64> {
    let innov = sigma * (1.0 - rho * rho).sqrt();
    let mut out = Vec::with_capacity(n);
    let mut b = sigma * normal(rng);
    for _ in 0..n {
        out.push(b);
        b = rho * b + innov * normal(rng);
    }
    out
}

/// A real video with default scene parameters.
pub fn generate_real(seed: u64, n_frames: usize, size: usize) -> Result<SynthVideo, SynthError> {
    generate_real_with(seed, n_frames, &SceneParams::new(size))
}

/// Renders a moving face proxy, runs the face pipeline on its known boxes
/// and samples margin crops; the brightness process is kept separately.
pub fn generate_real_with(seed: u64, n_frames: usize, p: &SceneParams) -> Result<SynthVideo, SynthError> {
    if n_frames < 16 {
        return Err(SynthError::TooFewFrames(n_frames));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let app = Appearance::random(&mut rng);
    let s = p.size as f64;
    let canvas = 2.0 * s;
    let face_side = s / (1.0 + facepipe::DEFAULT_MARGIN) * (0.92 + 0.08 * rng.random::<f64>());
    let amp = p.motion * s;
    let freq: [f64; 2] = std::array::from_fn(|_| p.motion_freq * (0.3 + 0.7 * rng.random::<f64>()));
    let phase: [f64; 2] = std::array::from_fn(|_| rng.random::<f64>() * 2.0 * PI);
    let center = |src_frame: usize| {
        let tau = src_frame as f64 / SOURCE_FPS;
        (
            canvas / 2.0 + amp * (2.0 * PI * freq[0] * tau + phase[0]).sin(),
            canvas / 2.0 + amp * (2.0 * PI * freq[1] * tau + phase[1]).sin(),
        )
    };

    let duration = n_frames as f64 / facepipe::DEFAULT_SAMPLE_RATE;
    let schedule = facepipe::schedule_frames(duration, SOURCE_FPS, facepipe::DEFAULT_SAMPLE_RATE);
    let detector = SyntheticDetector {
        boxes: schedule
            .iter()
            .map(|&i| {
                let (cx, cy) = center(i);
                BoundingBox::new(cx - face_side / 2.0, cy - face_side / 2.0, face_side, face_side, i)
            })
            .collect::<Result<_, _>>()?,
    };
    let track = FaceTrack::new(schedule.iter().flat_map(|&i| detector.detect_index(i)).collect(), SOURCE_FPS);
    let crops = facepipe::process_track(&track, OutlierParams::default(), facepipe::DEFAULT_MARGIN, canvas, canvas)?;

    let mut base = Vec::with_capacity(crops.len());
    let mut face = Vec::with_capacity(crops.len());
    for cb in &crops {
        let (fx, fy) = center(cb.frame_index);
        let scale = cb.w / s;
        let region = FaceRegion {
            cx: (fx - cb.x) / scale - 0.5,
            cy: (fy - cb.y) / scale - 0.5,
            rx: 0.4 * face_side / scale,
            ry: 0.5 * face_side / scale,
        };
        let mut img = FloatImage::new(p.size, p.size);
        for y in 0..p.size {
            for x in 0..p.size {
                let sx = cb.x + (x as f64 + 0.5) * scale;
                let sy = cb.y + (y as f64 + 0.5) * scale;
                let bg = app.background(sx / canvas, sy / canvas);
                let a = region.coverage(x as f64, y as f64, 1.0) as f64;
                let v = if a > 0.0 {
                    let u = (x as f64 - region.cx) / region.rx;
                    let w = (y as f64 - region.cy) / region.ry;
                    let fc = app.face(u, w, 1.0 / region.rx.min(region.ry));
                    std::array::from_fn(|k| (a * fc[k] + (1.0 - a) * bg[k]) as f32)
                } else {
                    bg.map(|c| c as f32)
                };
                img.set(x, y, v);
            }
        }
        base.push(img);
        face.push(region);
    }
    let brightness = ar1_series(&mut rng, base.len(), p.rho, p.sigma);
    Ok(SynthVideo {
        size: p.size,
        frame_indices: crops.iter().map(|b| b.frame_index).collect(),
        base,
        brightness,
        sigma: p.sigma,
        face,
        overlay: None,
    })
}

impl SyntheticDetector {
    /// Boxes known for a source frame.
    pub fn detect_index(&self, frame_index: usize) -> Vec<BoundingBox> {
        self.boxes.iter().copied().filter(|b| b.frame_index == frame_index).collect()
    }
}

/// Fake-generation method family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MethodName {
    /// Blend boundary: color-shifted inner face with a jittering mask edge.
    M1,
    /// Temporal flicker: brightness loses its frame-to-frame correlation.
    M2,
    /// Warp jitter: independent small affine warp of the face per frame.
    M3,
    /// Sharp seam: a static high-contrast seam.
    M4,
}

impl MethodName {
    pub const ALL: [MethodName; 4] = [MethodName::M1, MethodName::M2, MethodName::M3, MethodName::M4];

    pub fn as_str(&self) -> &'static str {
        match self {
            MethodName::M1 => "M1",
            MethodName::M2 => "M2",
            MethodName::M3 => "M3",
            MethodName::M4 => "M4",
        }
    }

    pub fn long_name(&self) -> &'static str {
        match self {
            MethodName::M1 => "M1_blend_boundary",
            MethodName::M2 => "M2_temporal_flicker",
            MethodName::M3 => "M3_warp_jitter",
            MethodName::M4 => "M4_sharp_seam",
        }
    }
}

impl fmt::Display for MethodName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodName {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MethodName::ALL
            .into_iter()
            .find(|m| s.eq_ignore_ascii_case(m.as_str()) || s.eq_ignore_ascii_case(m.long_name()))
            .ok_or_else(|| SynthError::UnknownMethod(s.to_string()))
    }
}

/// Method knobs; pixel quantities are in crop pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodParams {
    /// M1: per-frame mask-edge jitter.
    pub jitter_px: f64,
    /// M1: magnitude of the inner-face color shift.
    pub color_shift: f64,
    /// M2: share of fresh noise in the brightness, `a` in `sqrt(1-a^2) b + a e`.
    pub flicker: f64,
    /// M3: warp magnitude.
    pub warp_px: f64,
    /// M4: seam opacity.
    pub seam_contrast: f64,
}

impl Default for MethodParams {
    fn default() -> Self {
        Self { jitter_px: 1.0, color_shift: 0.07, flicker: 1.0, warp_px: 1.5, seam_contrast: 1.0 }
    }
}

impl MethodParams {
    pub fn zero() -> Self {
        Self { jitter_px: 0.0, color_shift: 0.0, flicker: 0.0, warp_px: 0.0, seam_contrast: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthMethod {
    pub name: MethodName,
    pub params: MethodParams,
}

impl SynthMethod {
    pub fn new(name: MethodName) -> Self {
        Self { name, params: MethodParams::default() }
    }

    pub fn all() -> Vec<SynthMethod> {
        MethodName::ALL.into_iter().map(Self::new).collect()
    }
}

/// Turns a real video into a fake of the given method.
pub fn apply_method(real: &SynthVideo, method: &SynthMethod, seed: u64) -> Result<SynthVideo, SynthError> {
    if real.is_empty() {
        return Err(SynthError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = real.clone();
    let p = &method.params;
    match method.name {
        MethodName::M1 => {
            if p.jitter_px == 0.0 && p.color_shift == 0.0 {
                return Ok(out);
            }
            let dir: [f64; 3] = std::array::from_fn(|_| normal(&mut rng));
            let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(1e-12);
            let shift = dir.map(|d| (p.color_shift * d / norm) as f32);
            for (img, f) in out.base.iter_mut().zip(&real.face) {
                let j = |rng: &mut ChaCha8Rng| (2.0 * rng.random::<f64>() - 1.0) * p.jitter_px;
                let mask = FaceRegion {
                    cx: f.cx + j(&mut rng),
                    cy: f.cy + j(&mut rng),
                    rx: (0.75 * f.rx + j(&mut rng)).max(1.0),
                    ry: (0.75 * f.ry + j(&mut rng)).max(1.0),
                };
                for y in 0..img.height {
                    for x in 0..img.width {
                        let a = mask.coverage(x as f64, y as f64, 1.0);
                        if a > 0.0 {
                            let v = img.get(x, y);
                            img.set(x, y, std::array::from_fn(|k| v[k] + a * shift[k]));
                        }
                    }
                }
            }
        }
        MethodName::M2 => {
            let a = p.flicker.clamp(0.0, 1.0);
            if a == 0.0 {
                return Ok(out);
            }
            let keep = (1.0 - a * a).sqrt();
            for b in out.brightness.iter_mut() {
                *b = keep * *b + a * real.sigma * normal(&mut rng);
            }
        }
        MethodName::M3 => {
            if p.warp_px == 0.0 {
                return Ok(out);
            }
            for (img, f) in out.base.iter_mut().zip(&real.face) {
                let u = |rng: &mut ChaCha8Rng| 2.0 * rng.random::<f64>() - 1.0;
                let r = f.rx.min(f.ry);
                let theta = u(&mut rng) * p.warp_px / r;
                let scale = 1.0 + 0.5 * u(&mut rng) * p.warp_px / r;
                let (tx, ty) = (u(&mut rng) * p.warp_px, u(&mut rng) * p.warp_px);
                let (sin, cos) = theta.sin_cos();
                let src = img.clone();
                for y in 0..img.height {
                    for x in 0..img.width {
                        let a = f.coverage(x as f64, y as f64, 1.1);
                        if a == 0.0 {
                            continue;
                        }
                        let dx = (x as f64 - f.cx - tx) / scale;
                        let dy = (y as f64 - f.cy - ty) / scale;
                        let sx = f.cx + cos * dx + sin * dy;
                        let sy = f.cy - sin * dx + cos * dy;
                        let w = src.sample(sx, sy);
                        let v = src.get(x, y);
                        img.set(x, y, std::array::from_fn(|k| (1.0 - a) * v[k] + a * w[k]));
                    }
                }
            }
        }
        MethodName::M4 => {
            if p.seam_contrast == 0.0 {
                return Ok(out);
            }
            let f = real.face[0];
            let n = real.size;
            let mut alpha = vec![0.0f32; n * n];
            let mut values = FloatImage::new(n, n);
            let c = p.seam_contrast.clamp(0.0, 1.0) as f32;
            for y in 0..n {
                for x in 0..n {
                    // A one-pixel bright arc along the lower face contour.
                    let on_arc = f.signed_dist(x as f64, y as f64, 0.85).abs() < 0.5 && (y as f64) > f.cy;
                    if on_arc {
                        alpha[y * n + x] = c;
                        values.set(x, y, [0.97, 0.97, 0.97]);
                    }
                }
            }
            out.overlay = Some(Overlay { alpha, values });
        }
    }
    Ok(out)
}

/// Parses a method by name and applies it with default parameters.
pub fn apply_named_method(real: &SynthVideo, name: &str, seed: u64) -> Result<SynthVideo, SynthError> {
    apply_method(real, &SynthMethod::new(name.parse()?), seed)
}

/// Corpus size and generation knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    /// Real videos per split: train, val, test.
    pub n_real: [usize; 3],
    pub methods: Vec<SynthMethod>,
    pub size: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    /// Share of real videos per split generated with elevated motion.
    pub motion_heavy_fraction: f64,
    pub seed: u64,
}

impl CorpusConfig {
    /// 72/14/14 real videos, every one paired with all four methods.
    pub fn desk(seed: u64) -> Self {
        Self {
            n_real: [72, 14, 14],
            methods: SynthMethod::all(),
            size: 64,
            min_frames: 16,
            max_frames: 24,
            motion_heavy_fraction: 0.25,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_real.iter().any(|&n| n == 0) {
            return Err(SynthError::BadConfig("every split needs at least one real video".into()));
        }
        if self.min_frames < 16 || self.max_frames < self.min_frames {
            return Err(SynthError::BadConfig(format!("frame range {}..={}", self.min_frames, self.max_frames)));
        }
        if self.size < 8 {
            return Err(SynthError::BadConfig(format!("size {} too small", self.size)));
        }
        let mut names: Vec<MethodName> = self.methods.iter().map(|m| m.name).collect();
        names.sort();
        names.dedup();
        if names.len() != self.methods.len() {
            return Err(SynthError::BadConfig("duplicate method".into()));
        }
        Ok(())
    }
}

/// Generates the corpus in memory.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<(CorpusManifest, VideoStore), SynthError> {
    cfg.validate()?;
    let mut records = Vec::new();
    let mut store = VideoStore::default();
    for (split, &n) in Split::ALL.iter().zip(&cfg.n_real) {
        let heavy = (cfg.motion_heavy_fraction * n as f64).round() as usize;
        for i in 0..n {
            let id = format!("{split}_{i:04}");
            let seed = derive_seed(cfg.seed, &["real", &id]);
            let span = cfg.max_frames - cfg.min_frames + 1;
            let n_frames = cfg.min_frames + (derive_seed(seed, &["len"]) % span as u64) as usize;
            let is_heavy = i < heavy;
            let params = if is_heavy { SceneParams::motion_heavy(cfg.size) } else { SceneParams::new(cfg.size) };
            let tags: Vec<String> = if is_heavy { vec![MOTION_HEAVY.to_string()] } else { vec![] };
            let real = generate_real_with(seed, n_frames, &params)?;
            for m in &cfg.methods {
                let fid = format!("{id}_{}", m.name);
                let fake = apply_method(&real, m, derive_seed(cfg.seed, &["fake", &fid]))?;
                let frames = fake.render();
                records.push(VideoRecord {
                    id: fid.clone(),
                    split: *split,
                    label: Label::Fake,
                    method: m.name.to_string(),
                    frame_dir: fid.clone(),
                    n_frames: frames.len(),
                    source: Some(id.clone()),
                    tags: tags.clone(),
                });
                store.insert_with_indices(&fid, frames, fake.frame_indices.clone());
            }
            let frames = real.render();
            records.push(VideoRecord {
                id: id.clone(),
                split: *split,
                label: Label::Real,
                method: REAL_METHOD.to_string(),
                frame_dir: id.clone(),
                n_frames: frames.len(),
                source: None,
                tags,
            });
            store.insert_with_indices(&id, frames, real.frame_indices.clone());
        }
    }
    // Reals first within each split, then fakes, for readable manifests.
    records.sort_by(|a, b| (a.split, a.label, &a.id).cmp(&(b.split, b.label, &b.id)));
    Ok((CorpusManifest::new(records, Some(cfg.seed))?, store))
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CONFIG_FILE: &str = "corpus.json";

/// Generates the corpus and writes frame directories, `manifest.jsonl` and `corpus.json`.
pub fn build_corpus(cfg: &CorpusConfig, out: &Path) -> Result<CorpusManifest, SynthError> {
    let (manifest, store) = generate_corpus(cfg)?;
    std::fs::create_dir_all(out)?;
    store.write(&manifest, out)?;
    manifest.write_jsonl(&out.join(MANIFEST_FILE))?;
    let cfg_json = serde_json::to_string_pretty(cfg).expect("config serializes");
    std::fs::write(out.join(CONFIG_FILE), cfg_json + "\n")?;
    Ok(manifest)
}
