use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::spec::{EncoderSpec, IMAGE_STAGE_WIDTHS};
use crate::blocks::ConvUnit;
use crate::error::EncoderError;
use crate::layers::{Dropout, GlobalAvgPool, Linear};
use crate::param::{join, Mode, Module, Visitor};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Frame-wise 2-D CNN: stacked 3×3 conv blocks, global pooling, dropout and one logit.
///
/// Operates on `[N, 3, 1, H, W]` frame batches.
#[derive(Clone, Debug)]
pub struct Image2dNet<T> {
    pub spec: EncoderSpec,
    pub blocks: Vec<ConvUnit<T>>,
    pool: GlobalAvgPool,
    dropout: Dropout<T>,
    pub head: Linear<T>,
    frozen_blocks: usize,
    last_activation: Option<Tensor<T>>,
}

impl<T: Scalar> Image2dNet<T> {
    pub fn new(spec: &EncoderSpec) -> Result<Self, EncoderError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut blocks = Vec::with_capacity(spec.n_blocks());
        let mut cin = 3;
        for (stage, &width) in IMAGE_STAGE_WIDTHS.iter().take(spec.n_stages).enumerate() {
            let cout = spec.scaled(width);
            for b in 0..spec.blocks_per_stage {
                let s = if stage > 0 && b == 0 { 2 } else { 1 };
                blocks.push(ConvUnit::same(cin, cout, [1, 3, 3], [1, s, s], &mut rng));
                cin = cout;
            }
        }
        let head = Linear::new(cin, 1, &mut rng);
        Ok(Self {
            spec: spec.clone(),
            blocks,
            pool: GlobalAvgPool::new(),
            dropout: Dropout::new(spec.dropout_p, spec.seed ^ 0x5eed),
            head,
            frozen_blocks: 0,
            last_activation: None,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.blocks.last().map(|b| b.out_channels()).unwrap_or(3)
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Freezes the first `k` blocks; frozen blocks always run in eval mode.
    pub fn freeze_first(&mut self, k: usize) {
        self.frozen_blocks = k.min(self.blocks.len());
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.set_frozen(i < self.frozen_blocks);
        }
    }

    pub fn freeze_all(&mut self) {
        self.freeze_first(self.blocks.len());
        self.head.set_frozen(true);
    }

    pub fn frozen_blocks(&self) -> usize {
        self.frozen_blocks
    }

    pub fn reseed_dropout(&mut self, seed: u64) {
        self.dropout.reseed(seed);
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), EncoderError> {
        if x.ndim() != 5 || x.dim(1) != 3 || x.dim(2) != 1 {
            return Err(EncoderError::ShapeMismatch(format!("image2d expects [N, 3, 1, H, W], got {:?}", x.shape())));
        }
        if x.dim(3) < 2 || x.dim(4) < 2 {
            return Err(EncoderError::ShapeMismatch(format!("frame {:?} too small", &x.shape()[3..])));
        }
        Ok(())
    }

    /// Pooled penultimate features `[N, C]`; the last conv activation stays cached.
    pub fn features(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, EncoderError> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let m = if i < self.frozen_blocks { Mode::Eval } else { mode };
            h = b.forward(&h, m);
        }
        let f = self.pool.forward(&h);
        self.last_activation = Some(h);
        Ok(f)
    }

    /// Backpropagates a feature gradient through the trainable blocks only.
    pub fn features_backward(&mut self, dfeat: &Tensor<T>) {
        if self.frozen_blocks == self.blocks.len() {
            return;
        }
        let mut d = self.pool.backward(dfeat);
        let stop = self.frozen_blocks;
        for i in (stop..self.blocks.len()).rev() {
            let need_dx = i > stop;
            match self.blocks[i].backward(&d, need_dx) {
                Some(dx) => d = dx,
                None => break,
            }
        }
    }

    /// Logits `[N]` and features `[N, C]`.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Vec<T>, Tensor<T>), EncoderError> {
        let f = self.features(x, mode)?;
        let h = self.dropout.forward(&f, mode);
        let logits = self.head.forward(&h).into_vec();
        Ok((logits, f))
    }

    /// Gradient at the feature vector for a logit gradient.
    pub fn head_backward(&mut self, dlogits: &[T]) -> Tensor<T> {
        let dy = Tensor::from_vec(&[dlogits.len(), 1], dlogits.to_vec());
        let dh = self.head.backward(&dy);
        self.dropout.backward(&dh)
    }

    pub fn backward(&mut self, dlogits: &[T]) {
        let df = self.head_backward(dlogits);
        self.features_backward(&df);
    }

    /// Gradient at the last conv activation for a logit gradient (Grad-CAM).
    pub fn activation_grad(&mut self, dlogits: &[T]) -> Tensor<T> {
        let df = self.head_backward(dlogits);
        self.pool.backward(&df)
    }

    pub fn last_activation(&self) -> Option<&Tensor<T>> {
        self.last_activation.as_ref()
    }
}

impl<T: Scalar> Module<T> for Image2dNet<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<T>) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), v);
        }
        self.head.visit(&join(prefix, "head"), v);
    }
}
