use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::image2d::Image2dNet;
use super::spec::{EncoderSpec, Family};
use crate::error::EncoderError;
use crate::layers::{BiGru, Dropout, Linear, Lstm, Relu};
use crate::param::{join, Mode, Module, Visitor};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check_clip<T: Scalar>(x: &Tensor<T>) -> Result<(), EncoderError> {
    if x.ndim() != 5 || x.dim(1) != 3 {
        return Err(EncoderError::ShapeMismatch(format!("expected [N, 3, T, H, W], got {:?}", x.shape())));
    }
    Ok(())
}

/// Runs the backbone over every frame of a clip batch: `[N, 3, T, H, W] -> [N, T, D]`.
fn frame_features<T: Scalar>(backbone: &mut Image2dNet<T>, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, EncoderError> {
    let (n, t) = (x.dim(0), x.dim(2));
    let f = backbone.features(&x.frames_of_clips(), mode)?;
    let d = f.dim(1);
    Ok(f.reshape(&[n, t, d]))
}

/// Selects the last time step of `[N, T, H]`.
fn last_step<T: Scalar>(seq: &Tensor<T>) -> Tensor<T> {
    let (n, t, h) = (seq.dim(0), seq.dim(1), seq.dim(2));
    let mut out = Tensor::zeros(&[n, h]);
    for b in 0..n {
        let src = (b * t + t - 1) * h;
        out.outer_mut(b).copy_from_slice(&seq.data()[src..src + h]);
    }
    out
}

fn last_step_backward<T: Scalar>(d: &Tensor<T>, t: usize) -> Tensor<T> {
    let (n, h) = (d.dim(0), d.dim(1));
    let mut out = Tensor::zeros(&[n, t, h]);
    for b in 0..n {
        let dst = (b * t + t - 1) * h;
        out.data_mut()[dst..dst + h].copy_from_slice(d.outer(b));
    }
    out
}

/// Frozen image backbone, two stacked LSTMs and a three-layer MLP head
/// reading the last time step.
#[derive(Clone, Debug)]
pub struct SeqLstmNet<T> {
    pub spec: EncoderSpec,
    pub backbone: Image2dNet<T>,
    pub lstm1: Lstm<T>,
    pub lstm2: Lstm<T>,
    drop1: Dropout<T>,
    pub fc1: Linear<T>,
    relu1: Relu<T>,
    drop2: Dropout<T>,
    pub fc2: Linear<T>,
    relu2: Relu<T>,
    pub fc3: Linear<T>,
    steps: usize,
}

impl<T: Scalar> SeqLstmNet<T> {
    pub fn new(spec: &EncoderSpec, mut backbone: Image2dNet<T>) -> Result<Self, EncoderError> {
        spec.validate()?;
        if spec.family != Family::SeqLstm {
            return Err(EncoderError::BadSpec(format!("expected seq_lstm, got {}", spec.family)));
        }
        backbone.freeze_all();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x1571);
        let d = backbone.feature_dim();
        let h = spec.rnn_hidden;
        let (w1, w2) = (spec.fc_widths[0], spec.fc_widths[1]);
        Ok(Self {
            spec: spec.clone(),
            lstm1: Lstm::new(d, h, &mut rng),
            lstm2: Lstm::new(h, h, &mut rng),
            drop1: Dropout::new(spec.dropout_p, spec.seed ^ 0xd1),
            fc1: Linear::new(h, w1, &mut rng),
            relu1: Relu::new(),
            drop2: Dropout::new(spec.dropout_p, spec.seed ^ 0xd2),
            fc2: Linear::new(w1, w2, &mut rng),
            relu2: Relu::new(),
            fc3: Linear::new(w2, 1, &mut rng),
            backbone,
            steps: 0,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.fc3.in_features
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Vec<T>, Tensor<T>), EncoderError> {
        check_clip(x)?;
        self.steps = x.dim(2);
        let seq = frame_features(&mut self.backbone, x, Mode::Eval)?;
        let h = self.lstm1.forward(&seq);
        let h = self.lstm2.forward(&h);
        let h = last_step(&h);
        let h = self.drop1.forward(&h, mode);
        let h = self.relu1.forward(&self.fc1.forward(&h));
        let h = self.drop2.forward(&h, mode);
        let feat = self.relu2.forward(&self.fc2.forward(&h));
        let logits = self.fc3.forward(&feat).into_vec();
        Ok((logits, feat))
    }

    pub fn backward(&mut self, dlogits: &[T]) {
        let d = Tensor::from_vec(&[dlogits.len(), 1], dlogits.to_vec());
        let d = self.fc3.backward(&d);
        let d = self.fc2.backward(&self.relu2.backward(&d));
        let d = self.drop2.backward(&d);
        let d = self.fc1.backward(&self.relu1.backward(&d));
        let d = self.drop1.backward(&d);
        let d = last_step_backward(&d, self.steps);
        let d = self.lstm2.backward(&d);
        // The backbone is frozen, so the input gradient is discarded.
        let _ = self.lstm1.backward(&d);
    }

    pub fn reseed_dropout(&mut self, seed: u64) {
        self.drop1.reseed(seed ^ 0xd1);
        self.drop2.reseed(seed ^ 0xd2);
    }
}

impl<T: Scalar> Module<T> for SeqLstmNet<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<T>) {
        self.backbone.visit(&join(prefix, "backbone"), v);
        self.lstm1.visit(&join(prefix, "lstm1"), v);
        self.lstm2.visit(&join(prefix, "lstm2"), v);
        self.fc1.visit(&join(prefix, "fc1"), v);
        self.fc2.visit(&join(prefix, "fc2"), v);
        self.fc3.visit(&join(prefix, "fc3"), v);
    }
}

/// Image backbone with its first blocks frozen, a bidirectional GRU, dropout
/// and one output layer on the final time step.
#[derive(Clone, Debug)]
pub struct SeqBiGruNet<T> {
    pub spec: EncoderSpec,
    pub backbone: Image2dNet<T>,
    pub gru: BiGru<T>,
    dropout: Dropout<T>,
    pub head: Linear<T>,
    steps: usize,
}

/// Number of backbone blocks the bi-GRU pipeline freezes: 20 of 25 at full scale.
pub fn bigru_frozen_blocks(n_blocks: usize, fraction: f64) -> usize {
    ((fraction * n_blocks as f64) - 1e-9).ceil().max(0.0) as usize
}

impl<T: Scalar> SeqBiGruNet<T> {
    pub fn new(spec: &EncoderSpec, mut backbone: Image2dNet<T>) -> Result<Self, EncoderError> {
        spec.validate()?;
        if spec.family != Family::SeqBigru {
            return Err(EncoderError::BadSpec(format!("expected seq_bigru, got {}", spec.family)));
        }
        let k = bigru_frozen_blocks(backbone.n_blocks(), spec.frozen_fraction);
        backbone.freeze_first(k);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x96u64);
        let d = backbone.feature_dim();
        let h = spec.rnn_hidden;
        Ok(Self {
            spec: spec.clone(),
            gru: BiGru::new(d, h, &mut rng),
            dropout: Dropout::new(spec.dropout_p, spec.seed ^ 0xd3),
            head: Linear::new(2 * h, 1, &mut rng),
            backbone,
            steps: 0,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.head.in_features
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Vec<T>, Tensor<T>), EncoderError> {
        check_clip(x)?;
        self.steps = x.dim(2);
        let seq = frame_features(&mut self.backbone, x, mode)?;
        let h = self.gru.forward(&seq);
        let feat = last_step(&h);
        let h = self.dropout.forward(&feat, mode);
        let logits = self.head.forward(&h).into_vec();
        Ok((logits, feat))
    }

    pub fn backward(&mut self, dlogits: &[T]) {
        let d = Tensor::from_vec(&[dlogits.len(), 1], dlogits.to_vec());
        let d = self.dropout.backward(&self.head.backward(&d));
        let d = last_step_backward(&d, self.steps);
        let dseq = self.gru.backward(&d);
        let (n, t, dim) = (dseq.dim(0), dseq.dim(1), dseq.dim(2));
        self.backbone.features_backward(&dseq.reshape(&[n * t, dim]));
    }

    pub fn reseed_dropout(&mut self, seed: u64) {
        self.dropout.reseed(seed ^ 0xd3);
    }
}

impl<T: Scalar> Module<T> for SeqBiGruNet<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<T>) {
        self.backbone.visit(&join(prefix, "backbone"), v);
        self.gru.visit(&join(prefix, "gru"), v);
        self.head.visit(&join(prefix, "head"), v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn freezes_twenty_of_twenty_five() {
        assert_eq!(bigru_frozen_blocks(25, 0.8), 20);
        assert_eq!(bigru_frozen_blocks(5, 0.8), 4);
        assert_eq!(bigru_frozen_blocks(7, 0.8), 6);
        assert_eq!(bigru_frozen_blocks(5, 0.0), 0);
    }
}
