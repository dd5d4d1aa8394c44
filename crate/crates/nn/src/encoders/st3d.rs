use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::spec::{EncoderSpec, Family, RESIDUAL_STAGE_WIDTHS, RESIDUAL_STEM_WIDTH};
use crate::blocks::{ConvUnit, InceptionBlock3d, InceptionWidths, ResidualBlock3d};
use crate::error::EncoderError;
use crate::layers::{Dropout, GlobalAvgPool, Linear, MaxPool3d};
use crate::param::{join, Mode, Module, Visitor};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const fn iw(b0: usize, b1_reduce: usize, b1: usize, b2_reduce: usize, b2: usize, b3: usize) -> InceptionWidths {
    InceptionWidths { b0, b1_reduce, b1, b2_reduce, b2, b3 }
}

/// Inception module widths of the three inflated stages (3b-3c, 4b-4f, 5b-5c).
const INCEPTION_STAGES: [&[InceptionWidths]; 3] = [
    &[iw(64, 96, 128, 16, 32, 32), iw(128, 128, 192, 32, 96, 64)],
    &[
        iw(192, 96, 208, 16, 48, 64),
        iw(160, 112, 224, 24, 64, 64),
        iw(128, 128, 256, 24, 64, 64),
        iw(112, 144, 288, 32, 64, 64),
        iw(256, 160, 320, 32, 128, 128),
    ],
    &[iw(256, 160, 320, 32, 128, 128), iw(384, 192, 384, 48, 128, 128)],
];

#[derive(Clone, Debug)]
enum InceptionLayer<T> {
    Unit(ConvUnit<T>),
    Pool(MaxPool3d),
    Block(InceptionBlock3d<T>),
}

#[derive(Clone, Debug)]
enum Trunk<T> {
    Residual(Vec<Vec<ResidualBlock3d<T>>>),
    /// Layers plus the index after which each stage ends.
    Inception(Vec<InceptionLayer<T>>, Vec<usize>),
}

/// Spatio-temporal 3-D CNN: stem, staged trunk, global average pool and one logit.
#[derive(Clone, Debug)]
pub struct St3dNet<T> {
    pub spec: EncoderSpec,
    stem: ConvUnit<T>,
    trunk: Trunk<T>,
    pool: GlobalAvgPool,
    dropout: Dropout<T>,
    pub head: Linear<T>,
    feature_dim: usize,
    last_activation: Option<Tensor<T>>,
}

/// Forward result of a 3-D network.
pub struct St3dOutput<T> {
    pub logits: Vec<T>,
    pub features: Tensor<T>,
    /// Activation shape after the stem and after every stage.
    pub stage_shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> St3dNet<T> {
    pub fn new(spec: &EncoderSpec) -> Result<Self, EncoderError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let stem_w = spec.scaled(RESIDUAL_STEM_WIDTH);
        // Temporal stride of the stem is 1 as well.
        let stem = ConvUnit::new(3, stem_w, [3, 7, 7], [1, 2, 2], [1, 3, 3], true, &mut rng);
        let (trunk, feature_dim) = match spec.family {
            Family::St3dResidual => {
                let mut stages = Vec::with_capacity(spec.n_stages);
                let mut cin = stem_w;
                for (i, &width) in RESIDUAL_STAGE_WIDTHS.iter().take(spec.n_stages).enumerate() {
                    let cout = spec.scaled(width);
                    let s = if i == 0 { 1 } else { 2 };
                    let ts = spec.stage_temporal_strides[i];
                    let mut blocks = Vec::with_capacity(spec.blocks_per_stage);
                    for b in 0..spec.blocks_per_stage {
                        let stride = if b == 0 { [ts, s, s] } else { [1, 1, 1] };
                        blocks.push(ResidualBlock3d::new(cin, cout, stride, &mut rng));
                        cin = cout;
                    }
                    stages.push(blocks);
                }
                (Trunk::Residual(stages), cin)
            }
            Family::St3dInception => {
                let mut layers = Vec::new();
                let mut ends = Vec::new();
                layers.push(InceptionLayer::Pool(MaxPool3d::new([1, 3, 3], [1, 2, 2], [0, 1, 1])));
                let c2 = spec.scaled(64);
                let c3 = spec.scaled(192);
                layers.push(InceptionLayer::Unit(ConvUnit::same(stem_w, c2, [1, 1, 1], [1, 1, 1], &mut rng)));
                layers.push(InceptionLayer::Unit(ConvUnit::same(c2, c3, [3, 3, 3], [1, 1, 1], &mut rng)));
                layers.push(InceptionLayer::Pool(MaxPool3d::new([1, 3, 3], [1, 2, 2], [0, 1, 1])));
                let mut cin = c3;
                for (i, stage) in INCEPTION_STAGES.iter().take(spec.n_stages).enumerate() {
                    if i > 0 {
                        let ts = spec.stage_temporal_strides[i];
                        layers.push(InceptionLayer::Pool(MaxPool3d::new([3, 3, 3], [ts, 2, 2], [1, 1, 1])));
                    }
                    for w in stage.iter().take(spec.blocks_per_stage) {
                        let block = InceptionBlock3d::new(cin, w.scaled(spec.width_multiplier), &mut rng);
                        cin = block.out_channels();
                        layers.push(InceptionLayer::Block(block));
                    }
                    ends.push(layers.len());
                }
                (Trunk::Inception(layers, ends), cin)
            }
            other => return Err(EncoderError::BadSpec(format!("{other} is not a 3-D family"))),
        };
        let head = Linear::new(feature_dim, 1, &mut rng);
        Ok(Self {
            spec: spec.clone(),
            stem,
            trunk,
            pool: GlobalAvgPool::new(),
            dropout: Dropout::new(spec.dropout_p, spec.seed ^ 0x5eed),
            head,
            feature_dim,
            last_activation: None,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn reseed_dropout(&mut self, seed: u64) {
        self.dropout.reseed(seed);
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<St3dOutput<T>, EncoderError> {
        if x.ndim() != 5 || x.dim(1) != 3 {
            return Err(EncoderError::ShapeMismatch(format!("st3d expects [N, 3, T, H, W], got {:?}", x.shape())));
        }
        if x.dim(3) < 4 || x.dim(4) < 4 {
            return Err(EncoderError::ShapeMismatch(format!("frame {:?} too small", &x.shape()[3..])));
        }
        let mut shapes = Vec::new();
        let mut h = self.stem.forward(x, mode);
        shapes.push(h.shape().to_vec());
        match &mut self.trunk {
            Trunk::Residual(stages) => {
                for stage in stages.iter_mut() {
                    for block in stage.iter_mut() {
                        h = block.forward(&h, mode);
                    }
                    shapes.push(h.shape().to_vec());
                }
            }
            Trunk::Inception(layers, ends) => {
                for (i, layer) in layers.iter_mut().enumerate() {
                    h = match layer {
                        InceptionLayer::Unit(u) => u.forward(&h, mode),
                        InceptionLayer::Pool(p) => p.forward(&h),
                        InceptionLayer::Block(b) => b.forward(&h, mode),
                    };
                    if ends.contains(&(i + 1)) {
                        shapes.push(h.shape().to_vec());
                    }
                }
            }
        }
        let features = self.pool.forward(&h);
        self.last_activation = Some(h);
        let d = self.dropout.forward(&features, mode);
        let logits = self.head.forward(&d).into_vec();
        Ok(St3dOutput { logits, features, stage_shapes: shapes })
    }

    /// Gradient at the last conv activation (the pooled map) for a logit gradient.
    pub fn activation_grad(&mut self, dlogits: &[T]) -> Tensor<T> {
        let dy = Tensor::from_vec(&[dlogits.len(), 1], dlogits.to_vec());
        let d = self.head.backward(&dy);
        let d = self.dropout.backward(&d);
        self.pool.backward(&d)
    }

    pub fn backward(&mut self, dlogits: &[T]) {
        let mut d = self.activation_grad(dlogits);
        match &mut self.trunk {
            Trunk::Residual(stages) => {
                for stage in stages.iter_mut().rev() {
                    for block in stage.iter_mut().rev() {
                        d = block.backward(&d, true).expect("requested");
                    }
                }
            }
            Trunk::Inception(layers, _) => {
                for layer in layers.iter_mut().rev() {
                    d = match layer {
                        InceptionLayer::Unit(u) => u.backward(&d, true).expect("requested"),
                        InceptionLayer::Pool(p) => p.backward(&d),
                        InceptionLayer::Block(b) => b.backward(&d, true).expect("requested"),
                    };
                }
            }
        }
        self.stem.backward(&d, false);
    }

    pub fn last_activation(&self) -> Option<&Tensor<T>> {
        self.last_activation.as_ref()
    }
}

impl<T: Scalar> Module<T> for St3dNet<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<T>) {
        self.stem.visit(&join(prefix, "stem"), v);
        match &mut self.trunk {
            Trunk::Residual(stages) => {
                for (i, stage) in stages.iter_mut().enumerate() {
                    for (j, block) in stage.iter_mut().enumerate() {
                        block.visit(&join(prefix, &format!("stage{i}.block{j}")), v);
                    }
                }
            }
            Trunk::Inception(layers, _) => {
                for (i, layer) in layers.iter_mut().enumerate() {
                    match layer {
                        InceptionLayer::Unit(u) => u.visit(&join(prefix, &format!("layer{i}")), v),
                        InceptionLayer::Block(b) => b.visit(&join(prefix, &format!("layer{i}")), v),
                        InceptionLayer::Pool(_) => {}
                    }
                }
            }
        }
        self.head.visit(&join(prefix, "head"), v);
    }
}
