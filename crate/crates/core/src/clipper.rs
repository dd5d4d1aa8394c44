//! Frame lists to model-ready clips: training windows, inference windows,
//! normalization and clip-consistent augmentation.

use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use stdeep_nn::{Normalization, Scalar, Tensor};
use thiserror::Error;

pub const DEFAULT_CLIP_LEN: usize = 16;
/// Window stride of the long-video protocol (no overlap).
pub const LONG_STRIDE: usize = 16;
/// Window stride of the short-video protocol.
pub const SHORT_STRIDE: usize = 2;

#[derive(Debug, Error)]
pub enum ClipError {
    #[error("no frames")]
    NoFrames,
    #[error("clip_len and stride must be at least 1")]
    BadLength,
    #[error("stride {stride} exceeds clip_len {clip_len}; windows would skip frames")]
    StrideTooLong { stride: usize, clip_len: usize },
}

/// Indices `0..len`, looping over a sequence of `n` frames.
pub fn looped(n: usize, start: usize, len: usize) -> Vec<usize> {
    (start..start + len).map(|i| i % n).collect()
}

/// Frame indices of a uniformly random consecutive window; short videos are
/// looped from the start until long enough.
pub fn sample_training_window(n_frames: usize, clip_len: usize, seed: u64) -> Result<Vec<usize>, ClipError> {
    if n_frames == 0 {
        return Err(ClipError::NoFrames);
    }
    if clip_len == 0 {
        return Err(ClipError::BadLength);
    }
    if n_frames <= clip_len {
        return Ok(looped(n_frames, 0, clip_len));
    }
    let start = ChaCha8Rng::seed_from_u64(seed).random_range(0..=n_frames - clip_len);
    Ok((start..start + clip_len).collect())
}

/// A random training clip, normalized and resized to the model resolution.
pub fn sample_training_clip(
    frames: &[RgbImage],
    clip_len: usize,
    seed: u64,
    norm: Normalization,
    resolution: usize,
) -> Result<ClipTensor, ClipError> {
    let idx = sample_training_window(frames.len(), clip_len, seed)?;
    let picked: Vec<&RgbImage> = idx.iter().map(|&i| &frames[i]).collect();
    Ok(ClipTensor::from_frames(&picked, norm, resolution))
}

/// Sliding-window inference plan over one video.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowPlan {
    pub starts: Vec<usize>,
    pub stride: usize,
    pub clip_len: usize,
    pub n_frames: usize,
}

impl WindowPlan {
    /// Frame indices of every window; tails and short videos loop.
    pub fn windows(&self) -> Vec<Vec<usize>> {
        self.starts.iter().map(|&s| looped(self.n_frames, s, self.clip_len)).collect()
    }
}

/// Starts `0, stride, 2*stride, ...` up to the first window reaching the end.
pub fn plan_inference_windows(n_frames: usize, clip_len: usize, stride: usize) -> Result<WindowPlan, ClipError> {
    if n_frames == 0 {
        return Err(ClipError::NoFrames);
    }
    if clip_len == 0 || stride == 0 {
        return Err(ClipError::BadLength);
    }
    if stride > clip_len {
        return Err(ClipError::StrideTooLong { stride, clip_len });
    }
    let mut starts = vec![0];
    while starts.last().unwrap() + clip_len < n_frames {
        starts.push(starts.last().unwrap() + stride);
    }
    Ok(WindowPlan { starts, stride, clip_len, n_frames })
}

/// `[3, T, H, W]` normalized clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipTensor {
    pub data: Tensor<f32>,
    pub normalization: Normalization,
}

impl ClipTensor {
    pub fn from_frames(frames: &[&RgbImage], norm: Normalization, resolution: usize) -> Self {
        let t = frames.len();
        let hw = resolution * resolution;
        let mut data = vec![0.0f32; 3 * t * hw];
        for (ti, f) in frames.iter().enumerate() {
            let plane = normalize(&resize_to(f, resolution), norm);
            for c in 0..3 {
                data[(c * t + ti) * hw..(c * t + ti + 1) * hw].copy_from_slice(&plane[c * hw..(c + 1) * hw]);
            }
        }
        Self { data: Tensor::from_vec(&[3, t, resolution, resolution], data), normalization: norm }
    }

    pub fn clip_len(&self) -> usize {
        self.data.dim(1)
    }

    /// Stacks clips into a `[N, 3, T, H, W]` batch.
    pub fn batch<T: Scalar>(clips: &[ClipTensor]) -> Tensor<T> {
        let items: Vec<Tensor<T>> = clips.iter().map(|c| c.data.cast()).collect();
        Tensor::stack(&items)
    }
}

/// Square resize to `resolution`, a no-op at matching size.
pub fn resize_to(img: &RgbImage, resolution: usize) -> RgbImage {
    let r = resolution as u32;
    if img.dimensions() == (r, r) {
        img.clone()
    } else {
        imageops::resize(img, r, r, FilterType::Triangle)
    }
}

/// Channel-planar `[3, H, W]` values `(pixel/255 - mean_c) / std_c`.
pub fn normalize(img: &RgbImage, norm: Normalization) -> Vec<f32> {
    let (w, h) = img.dimensions();
    let hw = (w * h) as usize;
    let (mean, std) = (norm.mean(), norm.std());
    let mut out = vec![0.0f32; 3 * hw];
    for (i, p) in img.pixels().enumerate() {
        for c in 0..3 {
            out[c * hw + i] = (p[c] as f32 / 255.0 - mean[c]) / std[c];
        }
    }
    out
}

/// Inverse of [`normalize`], rounding to 8 bits.
pub fn denormalize(planes: &[f32], width: u32, height: u32, norm: Normalization) -> RgbImage {
    let hw = (width * height) as usize;
    let (mean, std) = (norm.mean(), norm.std());
    RgbImage::from_fn(width, height, |x, y| {
        let i = (y * width + x) as usize;
        image::Rgb(std::array::from_fn(|c| ((planes[c * hw + i] * std[c] + mean[c]) * 255.0).round().clamp(0.0, 255.0) as u8))
    })
}

/// One of the optional extra augmentations, parameters fixed for a clip.
#[derive(Clone, Debug, PartialEq)]
pub enum Augment {
    /// Square crop at `(x, y)` with the given side, resized back.
    Crop { x: u32, y: u32, side: u32 },
    Jpeg { quality: u8 },
    /// Additive Gaussian noise; the same field is added to every frame.
    Noise { sigma: f32, seed: u64 },
    Blur { sigma: f32 },
    /// Down- then up-sampling by `factor`.
    Downscale { factor: f32 },
    Brightness { delta: f32 },
    /// Contrast scaling around mid-gray.
    Contrast { factor: f32 },
    Color { shift: [f32; 3] },
}

/// A clip-level augmentation draw.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentPlan {
    pub flip: bool,
    pub extra: Option<Augment>,
}

impl AugmentPlan {
    pub fn identity() -> Self {
        Self { flip: false, extra: None }
    }

    /// Flip with p = 0.5; independently, with p = 0.5, one extra augmentation
    /// drawn uniformly from the eight kinds.
    pub fn draw(seed: u64, width: u32, height: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flip = rng.random_bool(0.5);
        let extra = rng.random_bool(0.5).then(|| match rng.random_range(0..8) {
            0 => {
                let side = ((width.min(height) as f32) * rng.random_range(0.8..0.95)).round().max(1.0) as u32;
                let (mx, my) = (width - side, height - side);
                let (x, y) = if rng.random_bool(0.5) {
                    (rng.random_range(0..=mx), rng.random_range(0..=my))
                } else {
                    [(0, 0), (mx, 0), (0, my), (mx, my)][rng.random_range(0..4)]
                };
                Augment::Crop { x, y, side }
            }
            1 => Augment::Jpeg { quality: rng.random_range(50..=95) },
            2 => Augment::Noise { sigma: rng.random_range(0.01..0.05), seed: rng.random() },
            3 => Augment::Blur { sigma: rng.random_range(0.4..1.2) },
            4 => Augment::Downscale { factor: rng.random_range(0.5..0.8) },
            5 => Augment::Brightness { delta: rng.random_range(-0.1..0.1) },
            6 => Augment::Contrast { factor: rng.random_range(0.8..1.2) },
            _ => Augment::Color { shift: std::array::from_fn(|_| rng.random_range(-0.05..0.05)) },
        });
        Self { flip, extra }
    }

    /// Applies the same transform to every frame.
    pub fn apply(&self, frames: &[RgbImage]) -> Vec<RgbImage> {
        let noise = match &self.extra {
            Some(Augment::Noise { sigma, seed }) => frames.first().map(|f| noise_field(f.width(), f.height(), *sigma, *seed)),
            _ => None,
        };
        frames
            .iter()
            .map(|f| {
                let mut f = if self.flip { imageops::flip_horizontal(f) } else { f.clone() };
                if let Some(a) = &self.extra {
                    f = apply_one(&f, a, noise.as_deref());
                }
                f
            })
            .collect()
    }
}

/// Draws a plan from `seed` and applies it to the clip.
pub fn augment(frames: &[RgbImage], seed: u64) -> Vec<RgbImage> {
    let Some(first) = frames.first() else { return vec![] };
    AugmentPlan::draw(seed, first.width(), first.height()).apply(frames)
}

fn noise_field(w: u32, h: u32, sigma: f32, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..w * h * 3).map(|_| sigma * rng.sample::<f32, _>(StandardNormal)).collect()
}

fn map_pixels(f: &RgbImage, op: impl Fn(usize, f32) -> f32) -> RgbImage {
    let data = f
        .as_raw()
        .iter()
        .enumerate()
        .map(|(i, &v)| (op(i, v as f32 / 255.0) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    RgbImage::from_raw(f.width(), f.height(), data).expect("same dimensions")
}

fn apply_one(f: &RgbImage, a: &Augment, noise: Option<&[f32]>) -> RgbImage {
    let (w, h) = f.dimensions();
    match a {
        Augment::Crop { x, y, side } => {
            imageops::resize(&imageops::crop_imm(f, *x, *y, *side, *side).to_image(), w, h, FilterType::Triangle)
        }
        Augment::Jpeg { quality } => {
            let mut buf = Vec::new();
            JpegEncoder::new_with_quality(&mut buf, *quality).encode_image(f).expect("in-memory jpeg encode");
            image::load(Cursor::new(buf), image::ImageFormat::Jpeg).expect("jpeg decode").to_rgb8()
        }
        Augment::Noise { .. } => {
            let n = noise.expect("noise field prepared");
            map_pixels(f, |i, v| v + n[i])
        }
        Augment::Blur { sigma } => imageops::blur(f, *sigma),
        Augment::Downscale { factor } => {
            let (dw, dh) = (((w as f32 * factor).round() as u32).max(1), ((h as f32 * factor).round() as u32).max(1));
            imageops::resize(&imageops::resize(f, dw, dh, FilterType::Triangle), w, h, FilterType::Triangle)
        }
        Augment::Brightness { delta } => map_pixels(f, |_, v| v + delta),
        Augment::Contrast { factor } => map_pixels(f, |_, v| 0.5 + (v - 0.5) * factor),
        Augment::Color { shift } => map_pixels(f, |i, v| v + shift[i % 3]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(n: usize) -> Vec<RgbImage> {
        (0..n).map(|k| RgbImage::from_fn(12, 12, |x, y| image::Rgb([(x * 20) as u8, (y * 20) as u8, (k * 9) as u8]))).collect()
    }

    #[test]
    fn training_windows() {
        let starts: std::collections::BTreeSet<usize> =
            (0..2000).map(|s| sample_training_window(30, 16, s).unwrap()[0]).collect();
        assert_eq!(starts, (0..=14).collect());
        let short = sample_training_window(10, 16, 3).unwrap();
        assert_eq!(short, [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 0, 1, 2, 3, 4, 5]);
        assert_eq!(sample_training_window(16, 16, 5).unwrap(), (0..16).collect::<Vec<_>>());
        assert!(matches!(sample_training_window(0, 16, 0), Err(ClipError::NoFrames)));
    }

    #[test]
    fn inference_windows() {
        assert_eq!(plan_inference_windows(32, 16, 16).unwrap().starts, [0, 16]);
        let p = plan_inference_windows(20, 16, 2).unwrap();
        assert_eq!(p.starts, [0, 2, 4]);
        assert_eq!(p.windows()[2], (4..20).collect::<Vec<_>>());
        assert_eq!(plan_inference_windows(16, 16, 7).unwrap().starts, [0]);
        assert_eq!(plan_inference_windows(10, 16, 2).unwrap().windows()[0][10], 0);
        let tail = plan_inference_windows(40, 16, 16).unwrap();
        assert_eq!(tail.starts, [0, 16, 32]);
        assert_eq!(tail.windows()[2][8], 0);
        assert!(plan_inference_windows(20, 16, 0).is_err());
    }

    #[test]
    fn normalization_constants() {
        let px = |v: u8| RgbImage::from_pixel(1, 1, image::Rgb([v, v, v]));
        assert_eq!(normalize(&px(255), Normalization::HalfHalf), [1.0; 3]);
        let red = normalize(&px(255), Normalization::ImagenetStats)[0];
        assert!((red - 2.2489).abs() < 1e-4);
        let mid = 0.5 * 255.0 / 255.0;
        assert!(((mid - 0.5) / 0.5_f32).abs() < 1e-7);
        let img = &frames(1)[0];
        for n in [Normalization::HalfHalf, Normalization::ImagenetStats] {
            assert_eq!(&denormalize(&normalize(img, n), 12, 12, n), img);
        }
    }

    #[test]
    fn clip_tensor_layout() {
        let f = frames(3);
        let refs: Vec<&RgbImage> = f.iter().collect();
        let c = ClipTensor::from_frames(&refs, Normalization::HalfHalf, 8);
        assert_eq!(c.data.shape(), [3, 3, 8, 8]);
        let b = ClipTensor::batch::<f64>(&[c.clone(), c]);
        assert_eq!(b.shape(), [2, 3, 3, 8, 8]);
        // Blue channel encodes the frame number.
        let at = |t: usize| c_value(&b, 2, t);
        assert!(at(0) < at(1) && at(1) < at(2));
    }

    fn c_value(b: &Tensor<f64>, c: usize, t: usize) -> f64 {
        b.data()[((c * 3) + t) * 64]
    }

    #[test]
    fn augmentation_is_clip_consistent() {
        let f: Vec<RgbImage> = (0..4).map(|_| frames(1).remove(0)).collect();
        for seed in 0..200 {
            let out = augment(&f, seed);
            assert!(out.windows(2).all(|w| w[0] == w[1]), "seed {seed}");
        }
        let flip = AugmentPlan { flip: true, extra: None };
        assert_eq!(flip.apply(&flip.apply(&f)), f);
        assert_eq!(AugmentPlan::identity().apply(&f), f);
    }

    #[test]
    fn flip_frequency() {
        let n = 10_000;
        let flips = (0..n).filter(|&s| AugmentPlan::draw(s, 16, 16).flip).count();
        let p = flips as f64 / n as f64;
        assert!((0.48..=0.52).contains(&p), "{p}");
    }
}
