//! The three encoder families behind one forward/backward interface.

mod image2d;
mod seq;
mod spec;
mod st3d;

pub use image2d::Image2dNet;
pub use seq::{bigru_frozen_blocks, SeqBiGruNet, SeqLstmNet};
pub use spec::{EncoderSpec, Family, Normalization};
pub use st3d::{St3dNet, St3dOutput};

use crate::error::EncoderError;
use crate::param::{Mode, Module, Visitor};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Logits and penultimate features for a batch.
#[derive(Clone, Debug)]
pub struct EncoderOutput<T> {
    /// Pre-sigmoid fake-vs-real scores, one per item (per frame for image encoders).
    pub logits: Vec<T>,
    /// Inputs to the classification layer, `[items, feature_dim]`.
    pub features: Tensor<T>,
    /// Per-stage activation shapes (3-D families only).
    pub stage_shapes: Vec<Vec<usize>>,
}

#[derive(Clone, Debug)]
pub enum Encoder<T> {
    Image2d(Image2dNet<T>),
    SeqLstm(SeqLstmNet<T>),
    SeqBiGru(SeqBiGruNet<T>),
    St3d(St3dNet<T>),
}

pub fn build_image2d<T: Scalar>(spec: &EncoderSpec) -> Result<Encoder<T>, EncoderError> {
    if spec.family != Family::Image2d {
        return Err(EncoderError::BadSpec(format!("expected image2d, got {}", spec.family)));
    }
    Ok(Encoder::Image2d(Image2dNet::new(spec)?))
}

/// Wraps a (trained) image backbone; the backbone is frozen completely.
pub fn build_seq_lstm<T: Scalar>(spec: &EncoderSpec, backbone: Image2dNet<T>) -> Result<Encoder<T>, EncoderError> {
    Ok(Encoder::SeqLstm(SeqLstmNet::new(spec, backbone)?))
}

/// Wraps a (trained) image backbone; its first blocks are frozen.
pub fn build_seq_bigru<T: Scalar>(spec: &EncoderSpec, backbone: Image2dNet<T>) -> Result<Encoder<T>, EncoderError> {
    Ok(Encoder::SeqBiGru(SeqBiGruNet::new(spec, backbone)?))
}

pub fn build_st3d<T: Scalar>(spec: &EncoderSpec) -> Result<Encoder<T>, EncoderError> {
    if !spec.family.is_st3d() {
        return Err(EncoderError::BadSpec(format!("expected a 3-D family, got {}", spec.family)));
    }
    Ok(Encoder::St3d(St3dNet::new(spec)?))
}

impl<T: Scalar> Encoder<T> {
    /// Builds any family; sequential families get a freshly initialized backbone.
    pub fn build(spec: &EncoderSpec) -> Result<Self, EncoderError> {
        spec.validate()?;
        match spec.family {
            Family::Image2d => build_image2d(spec),
            Family::St3dResidual | Family::St3dInception => build_st3d(spec),
            Family::SeqLstm | Family::SeqBigru => {
                let bb_spec = spec.backbone.as_deref().expect("validated");
                let backbone = Image2dNet::new(bb_spec)?;
                Self::build_with_backbone(spec, backbone)
            }
        }
    }

    pub fn build_with_backbone(spec: &EncoderSpec, backbone: Image2dNet<T>) -> Result<Self, EncoderError> {
        match spec.family {
            Family::SeqLstm => build_seq_lstm(spec, backbone),
            Family::SeqBigru => build_seq_bigru(spec, backbone),
            other => Err(EncoderError::BadSpec(format!("{other} takes no backbone"))),
        }
    }

    pub fn spec(&self) -> &EncoderSpec {
        match self {
            Encoder::Image2d(m) => &m.spec,
            Encoder::SeqLstm(m) => &m.spec,
            Encoder::SeqBiGru(m) => &m.spec,
            Encoder::St3d(m) => &m.spec,
        }
    }

    pub fn family(&self) -> Family {
        self.spec().family
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Encoder::Image2d(m) => m.feature_dim(),
            Encoder::SeqLstm(m) => m.feature_dim(),
            Encoder::SeqBiGru(m) => m.feature_dim(),
            Encoder::St3d(m) => m.feature_dim(),
        }
    }

    /// Forward pass over `[N, 3, T, H, W]`.
    ///
    /// Image encoders treat every frame independently and return `N*T`
    /// outputs in clip-major order; video encoders return `N`.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<EncoderOutput<T>, EncoderError> {
        if x.ndim() != 5 {
            return Err(EncoderError::ShapeMismatch(format!("expected a 5-d batch, got {:?}", x.shape())));
        }
        match self {
            Encoder::Image2d(m) => {
                let frames = if x.dim(2) == 1 { x.clone() } else { x.frames_of_clips() };
                let (logits, features) = m.forward(&frames, mode)?;
                Ok(EncoderOutput { logits, features, stage_shapes: vec![] })
            }
            Encoder::SeqLstm(m) => {
                let (logits, features) = m.forward(x, mode)?;
                Ok(EncoderOutput { logits, features, stage_shapes: vec![] })
            }
            Encoder::SeqBiGru(m) => {
                let (logits, features) = m.forward(x, mode)?;
                Ok(EncoderOutput { logits, features, stage_shapes: vec![] })
            }
            Encoder::St3d(m) => {
                let out = m.forward(x, mode)?;
                Ok(EncoderOutput { logits: out.logits, features: out.features, stage_shapes: out.stage_shapes })
            }
        }
    }

    /// Accumulates parameter gradients for `d loss / d logit` of the last forward.
    pub fn backward(&mut self, dlogits: &[T]) {
        match self {
            Encoder::Image2d(m) => m.backward(dlogits),
            Encoder::SeqLstm(m) => m.backward(dlogits),
            Encoder::SeqBiGru(m) => m.backward(dlogits),
            Encoder::St3d(m) => m.backward(dlogits),
        }
    }

    /// Last convolutional activation of the previous forward and the gradient
    /// of the given logit weights with respect to it.
    pub fn activation_and_grad(&mut self, dlogits: &[T]) -> Result<(Tensor<T>, Tensor<T>), EncoderError> {
        match self {
            Encoder::Image2d(m) => {
                let a = m.last_activation().cloned().ok_or(EncoderError::NoConvBlock)?;
                Ok((a, m.activation_grad(dlogits)))
            }
            Encoder::St3d(m) => {
                let a = m.last_activation().cloned().ok_or(EncoderError::NoConvBlock)?;
                Ok((a, m.activation_grad(dlogits)))
            }
            Encoder::SeqLstm(_) | Encoder::SeqBiGru(_) => Err(EncoderError::NoConvBlock),
        }
    }

    /// Re-seeds every dropout generator so a training run is reproducible.
    pub fn reseed_dropout(&mut self, seed: u64) {
        match self {
            Encoder::Image2d(m) => m.reseed_dropout(seed),
            Encoder::SeqLstm(m) => m.reseed_dropout(seed),
            Encoder::SeqBiGru(m) => m.reseed_dropout(seed),
            Encoder::St3d(m) => m.reseed_dropout(seed),
        }
    }
}

impl<T: Scalar> Module<T> for Encoder<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<T>) {
        match self {
            Encoder::Image2d(m) => m.visit(prefix, v),
            Encoder::SeqLstm(m) => m.visit(prefix, v),
            Encoder::SeqBiGru(m) => m.visit(prefix, v),
            Encoder::St3d(m) => m.visit(prefix, v),
        }
    }
}

/// The logistic link shared by every family.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
