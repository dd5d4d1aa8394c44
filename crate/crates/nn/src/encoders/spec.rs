use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::EncoderError;

/// The encoder families compared by the framework.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Frame-wise 2-D CNN; video scores average per-frame predictions.
    Image2d,
    /// Frozen 2-D backbone, two-layer LSTM and a three-layer MLP head.
    SeqLstm,
    /// Partially frozen 2-D backbone and a single-layer bidirectional GRU.
    SeqBigru,
    /// Residual 3-D CNN.
    St3dResidual,
    /// Inflated inception-style 3-D CNN, RGB stream only.
    St3dInception,
}

impl Family {
    pub const ALL: [Family; 5] =
        [Family::Image2d, Family::SeqLstm, Family::SeqBigru, Family::St3dResidual, Family::St3dInception];

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Image2d => "image2d",
            Family::SeqLstm => "seq_lstm",
            Family::SeqBigru => "seq_bigru",
            Family::St3dResidual => "st3d_residual",
            Family::St3dInception => "st3d_inception",
        }
    }

    /// Whether the family consumes whole clips (as opposed to single frames).
    pub fn is_video(&self) -> bool {
        !matches!(self, Family::Image2d)
    }

    pub fn is_sequential(&self) -> bool {
        matches!(self, Family::SeqLstm | Family::SeqBigru)
    }

    pub fn is_st3d(&self) -> bool {
        matches!(self, Family::St3dResidual | Family::St3dInception)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = EncoderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "image2d" | "image" | "2d" => Ok(Family::Image2d),
            "seq_lstm" | "lstm" => Ok(Family::SeqLstm),
            "seq_bigru" | "bigru" | "gru" => Ok(Family::SeqBigru),
            "st3d_residual" | "st3d" | "r3d" => Ok(Family::St3dResidual),
            "st3d_inception" | "i3d" => Ok(Family::St3dInception),
            other => Err(EncoderError::BadSpec(format!("unknown encoder family `{other}`"))),
        }
    }
}

/// Pixel normalization scheme applied before a model sees a frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// ImageNet channel statistics at 224 px.
    ImagenetStats,
    /// Mean and std 0.5 on every channel at 299 px.
    HalfHalf,
}

impl Normalization {
    pub fn mean(&self) -> [f32; 3] {
        match self {
            Normalization::ImagenetStats => [0.485, 0.456, 0.406],
            Normalization::HalfHalf => [0.5; 3],
        }
    }

    pub fn std(&self) -> [f32; 3] {
        match self {
            Normalization::ImagenetStats => [0.229, 0.224, 0.225],
            Normalization::HalfHalf => [0.5; 3],
        }
    }

    /// Resolution paired with the scheme by the full-scale models.
    pub fn default_resolution(&self) -> usize {
        match self {
            Normalization::ImagenetStats => 224,
            Normalization::HalfHalf => 299,
        }
    }
}

impl FromStr for Normalization {
    type Err = EncoderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "imagenet_stats" | "imagenet" => Ok(Normalization::ImagenetStats),
            "half_half" | "half" => Ok(Normalization::HalfHalf),
            other => Err(EncoderError::BadSpec(format!("unknown normalization `{other}`"))),
        }
    }
}

/// Declarative description of one encoder.
///
/// `width_multiplier`, `n_stages` and `blocks_per_stage` shrink the full
/// architectures down to desk scale; the full presets keep them at the
/// published values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub family: Family,
    pub width_multiplier: f64,
    pub n_stages: usize,
    pub blocks_per_stage: usize,
    /// One entry per stage (3-D families only). All ones means no temporal downsampling.
    #[serde(default)]
    pub stage_temporal_strides: Vec<usize>,
    pub clip_len: usize,
    pub dropout_p: f64,
    pub resolution: usize,
    pub normalization: Normalization,
    /// Recurrent hidden width (sequential families).
    #[serde(default)]
    pub rnn_hidden: usize,
    /// Hidden widths of the LSTM pipeline's MLP head; the output layer is implicit.
    #[serde(default)]
    pub fc_widths: Vec<usize>,
    /// Fraction of backbone blocks frozen by the bi-GRU pipeline.
    #[serde(default)]
    pub frozen_fraction: f64,
    #[serde(default)]
    pub backbone: Option<Box<EncoderSpec>>,
    /// Weight-initialization seed.
    #[serde(default)]
    pub seed: u64,
}

/// Full-width channel plan of the image backbone, one entry per stage.
pub(crate) const IMAGE_STAGE_WIDTHS: [usize; 5] = [32, 64, 128, 256, 512];
/// Full-width channel plan of the residual 3-D trunk.
pub(crate) const RESIDUAL_STAGE_WIDTHS: [usize; 4] = [64, 128, 256, 512];
pub(crate) const RESIDUAL_STEM_WIDTH: usize = 64;

impl EncoderSpec {
    /// Desk-scale default for any family.
    pub fn desk(family: Family) -> Self {
        match family {
            Family::Image2d => Self::efficient_like().desk_scaled(),
            Family::SeqLstm => Self {
                family,
                width_multiplier: 1.0,
                n_stages: 1,
                blocks_per_stage: 1,
                stage_temporal_strides: vec![],
                clip_len: 16,
                dropout_p: 0.3,
                resolution: 32,
                normalization: Normalization::ImagenetStats,
                rnn_hidden: 64,
                fc_widths: vec![64, 16],
                frozen_fraction: 1.0,
                backbone: Some(Box::new(Self::desk(Family::Image2d))),
                seed: 0,
            },
            Family::SeqBigru => Self {
                family,
                rnn_hidden: 64,
                fc_widths: vec![],
                frozen_fraction: 0.8,
                ..Self::desk(Family::SeqLstm)
            },
            Family::St3dResidual => Self {
                width_multiplier: 0.125,
                blocks_per_stage: 1,
                resolution: 32,
                ..Self::r3d18()
            },
            Family::St3dInception => Self {
                width_multiplier: 0.125,
                n_stages: 2,
                blocks_per_stage: 1,
                stage_temporal_strides: vec![1, 1],
                resolution: 32,
                ..Self::i3d_rgb()
            },
        }
    }

    /// Full-scale preset of the family.
    pub fn full(family: Family) -> Self {
        match family {
            Family::Image2d => Self::efficient_like(),
            Family::SeqLstm => Self {
                rnn_hidden: 256,
                fc_widths: vec![256, 64],
                resolution: 224,
                backbone: Some(Box::new(Self::efficient_like())),
                ..Self::desk(Family::SeqLstm)
            },
            Family::SeqBigru => Self {
                rnn_hidden: 256,
                resolution: 224,
                backbone: Some(Box::new(Self::efficient_like())),
                ..Self::desk(Family::SeqBigru)
            },
            Family::St3dResidual => Self::r3d18(),
            Family::St3dInception => Self::i3d_rgb(),
        }
    }

    /// ImageNet-normalized image encoder with dropout 0.3 before the output layer.
    pub fn efficient_like() -> Self {
        Self {
            family: Family::Image2d,
            width_multiplier: 1.0,
            n_stages: 5,
            blocks_per_stage: 5,
            stage_temporal_strides: vec![],
            clip_len: 1,
            dropout_p: 0.3,
            resolution: 224,
            normalization: Normalization::ImagenetStats,
            rnn_hidden: 0,
            fc_widths: vec![],
            frozen_fraction: 0.0,
            backbone: None,
            seed: 0,
        }
    }

    /// Half/half-normalized image encoder at 299 px without dropout.
    pub fn xception_like() -> Self {
        Self {
            dropout_p: 0.0,
            resolution: 299,
            normalization: Normalization::HalfHalf,
            ..Self::efficient_like()
        }
    }

    /// 18-layer residual 3-D network with every temporal stride set to 1.
    pub fn r3d18() -> Self {
        Self {
            family: Family::St3dResidual,
            width_multiplier: 1.0,
            n_stages: 4,
            blocks_per_stage: 2,
            stage_temporal_strides: vec![1, 1, 1, 1],
            clip_len: 16,
            dropout_p: 0.0,
            resolution: 224,
            normalization: Normalization::ImagenetStats,
            rnn_hidden: 0,
            fc_widths: vec![],
            frozen_fraction: 0.0,
            backbone: None,
            seed: 0,
        }
    }

    /// The residual network with the original temporal downsampling at stages 2-4.
    pub fn with_original_temporal_strides(mut self) -> Self {
        self.stage_temporal_strides = (0..self.n_stages).map(|i| if i == 0 { 1 } else { 2 }).collect();
        self
    }

    pub fn i3d_rgb() -> Self {
        Self {
            family: Family::St3dInception,
            n_stages: 3,
            blocks_per_stage: 5,
            stage_temporal_strides: vec![1, 1, 1],
            ..Self::r3d18()
        }
    }

    /// Image-encoder desk shrink: quarter width, one block per stage, 32 px.
    pub fn desk_scaled(mut self) -> Self {
        self.width_multiplier = 0.25;
        self.blocks_per_stage = 1;
        self.resolution = 32;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        if let Some(b) = self.backbone.as_mut() {
            b.seed = seed;
        }
        self
    }

    /// True when no stage compresses the time axis.
    pub fn preserves_temporal(&self) -> bool {
        self.stage_temporal_strides.iter().all(|&s| s == 1)
    }

    pub fn scaled(&self, width: usize) -> usize {
        ((width as f64 * self.width_multiplier).round() as usize).max(1)
    }

    /// Total number of backbone conv blocks (image family).
    pub fn n_blocks(&self) -> usize {
        self.n_stages * self.blocks_per_stage
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: String| Err(EncoderError::BadSpec(m));
        if !(self.width_multiplier > 0.0 && self.width_multiplier.is_finite()) {
            return bad(format!("width_multiplier must be positive, got {}", self.width_multiplier));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p must be in [0, 1), got {}", self.dropout_p));
        }
        if self.resolution < 8 {
            return bad(format!("resolution {} is too small", self.resolution));
        }
        if self.clip_len == 0 {
            return bad("clip_len must be at least 1".into());
        }
        if self.n_stages == 0 || self.blocks_per_stage == 0 {
            return bad("n_stages and blocks_per_stage must be positive".into());
        }
        match self.family {
            Family::Image2d => {
                if self.n_stages > IMAGE_STAGE_WIDTHS.len() {
                    return bad(format!("image2d supports at most {} stages", IMAGE_STAGE_WIDTHS.len()));
                }
            }
            Family::St3dResidual | Family::St3dInception => {
                let max = if self.family == Family::St3dResidual { RESIDUAL_STAGE_WIDTHS.len() } else { 3 };
                if self.n_stages > max {
                    return bad(format!("{} supports at most {max} stages", self.family));
                }
                if self.stage_temporal_strides.len() != self.n_stages {
                    return bad(format!(
                        "stage_temporal_strides has {} entries for {} stages",
                        self.stage_temporal_strides.len(),
                        self.n_stages
                    ));
                }
                if self.stage_temporal_strides.iter().any(|&s| s == 0) {
                    return bad("temporal strides must be at least 1".into());
                }
            }
            Family::SeqLstm | Family::SeqBigru => {
                let Some(bb) = self.backbone.as_deref() else {
                    return bad(format!("{} needs a backbone spec", self.family));
                };
                if bb.family != Family::Image2d {
                    return bad(format!("{} backbone must be image2d, got {}", self.family, bb.family));
                }
                bb.validate()?;
                if self.rnn_hidden == 0 {
                    return bad("rnn_hidden must be positive".into());
                }
                if self.family == Family::SeqLstm && self.fc_widths.len() != 2 {
                    return bad("the LSTM head needs exactly two hidden widths".into());
                }
                if !(0.0..=1.0).contains(&self.frozen_fraction) {
                    return bad("frozen_fraction must be in [0, 1]".into());
                }
            }
        }
        Ok(())
    }
}
