use rand::Rng;

use crate::layers::{BatchNorm, Conv3d, MaxPool3d, Relu};
use crate::param::{join, Mode, Module, Visitor};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Convolution, batch norm and optional ReLU.
#[derive(Clone, Debug)]
pub struct ConvUnit<T> {
    pub conv: Conv3d<T>,
    pub bn: BatchNorm<T>,
    relu: Option<Relu<T>>,
}

impl<T: Scalar> ConvUnit<T> {
    pub fn new(
        cin: usize,
        cout: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
        relu: bool,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            conv: Conv3d::new(cin, cout, kernel, stride, padding, false, rng),
            bn: BatchNorm::new(cout),
            relu: relu.then(Relu::new),
        }
    }

    /// Same-padded unit with an odd cubic-ish kernel.
    pub fn same(cin: usize, cout: usize, kernel: [usize; 3], stride: [usize; 3], rng: &mut impl Rng) -> Self {
        let padding = [kernel[0] / 2, kernel[1] / 2, kernel[2] / 2];
        Self::new(cin, cout, kernel, stride, padding, true, rng)
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let y = self.conv.forward(x);
        let y = self.bn.forward(&y, mode);
        match self.relu.as_mut() {
            Some(r) => r.forward(&y),
            None => y,
        }
    }

    pub fn backward(&mut self, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let d = match self.relu.as_mut() {
            Some(r) => r.backward(dy),
            None => dy.clone(),
        };
        let d = self.bn.backward(&d);
        self.conv.backward(&d, need_dx)
    }
}

impl<T: Scalar> Module<T> for ConvUnit<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<T>) {
        self.conv.visit(&join(prefix, "conv"), v);
        self.bn.visit(&join(prefix, "bn"), v);
    }
}

/// Two 3×3×3 convolutions with an identity or projected shortcut.
#[derive(Clone, Debug)]
pub struct ResidualBlock3d<T> {
    pub unit1: ConvUnit<T>,
    pub unit2: ConvUnit<T>,
    pub shortcut: Option<ConvUnit<T>>,
    out_relu: Relu<T>,
}

impl<T: Scalar> ResidualBlock3d<T> {
    pub fn new(cin: usize, cout: usize, stride: [usize; 3], rng: &mut impl Rng) -> Self {
        let unit1 = ConvUnit::new(cin, cout, [3, 3, 3], stride, [1, 1, 1], true, rng);
        let unit2 = ConvUnit::new(cout, cout, [3, 3, 3], [1, 1, 1], [1, 1, 1], false, rng);
        let shortcut = (cin != cout || stride != [1, 1, 1])
            .then(|| ConvUnit::new(cin, cout, [1, 1, 1], stride, [0, 0, 0], false, rng));
        Self { unit1, unit2, shortcut, out_relu: Relu::new() }
    }

    pub fn out_channels(&self) -> usize {
        self.unit2.out_channels()
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let main = self.unit1.forward(x, mode);
        let mut main = self.unit2.forward(&main, mode);
        match self.shortcut.as_mut() {
            Some(s) => main.add_assign(&s.forward(x, mode)),
            None => main.add_assign(x),
        }
        self.out_relu.forward(&main)
    }

    pub fn backward(&mut self, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let d = self.out_relu.backward(dy);
        let dmain = self.unit2.backward(&d, true).expect("inner gradient");
        let dmain = self.unit1.backward(&dmain, need_dx);
        let dshort = match self.shortcut.as_mut() {
            Some(s) => s.backward(&d, need_dx),
            None => need_dx.then_some(d),
        };
        match (dmain, dshort) {
            (Some(mut a), Some(b)) => {
                a.add_assign(&b);
                Some(a)
            }
            _ => None,
        }
    }
}

impl<T: Scalar> Module<T> for ResidualBlock3d<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<T>) {
        self.unit1.visit(&join(prefix, "unit1"), v);
        self.unit2.visit(&join(prefix, "unit2"), v);
        if let Some(s) = self.shortcut.as_mut() {
            s.visit(&join(prefix, "shortcut"), v);
        }
    }
}

/// Output widths of the four inception branches plus the two reduction widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InceptionWidths {
    pub b0: usize,
    pub b1_reduce: usize,
    pub b1: usize,
    pub b2_reduce: usize,
    pub b2: usize,
    pub b3: usize,
}

impl InceptionWidths {
    pub fn total(&self) -> usize {
        self.b0 + self.b1 + self.b2 + self.b3
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let s = |c: usize| ((c as f64 * factor).round() as usize).max(1);
        Self {
            b0: s(self.b0),
            b1_reduce: s(self.b1_reduce),
            b1: s(self.b1),
            b2_reduce: s(self.b2_reduce),
            b2: s(self.b2),
            b3: s(self.b3),
        }
    }
}

/// Inflated inception module: 1×1×1, two reduce-then-3×3×3 branches and a
/// pooled projection, concatenated along channels. Temporal stride is 1.
#[derive(Clone, Debug)]
pub struct InceptionBlock3d<T> {
    pub b0: ConvUnit<T>,
    pub b1: (ConvUnit<T>, ConvUnit<T>),
    pub b2: (ConvUnit<T>, ConvUnit<T>),
    pub pool: MaxPool3d,
    pub b3: ConvUnit<T>,
    pub widths: InceptionWidths,
}

impl<T: Scalar> InceptionBlock3d<T> {
    pub fn new(cin: usize, w: InceptionWidths, rng: &mut impl Rng) -> Self {
        let one = [1, 1, 1];
        Self {
            b0: ConvUnit::same(cin, w.b0, one, one, rng),
            b1: (ConvUnit::same(cin, w.b1_reduce, one, one, rng), ConvUnit::same(w.b1_reduce, w.b1, [3, 3, 3], one, rng)),
            b2: (ConvUnit::same(cin, w.b2_reduce, one, one, rng), ConvUnit::same(w.b2_reduce, w.b2, [3, 3, 3], one, rng)),
            pool: MaxPool3d::new([3, 3, 3], one, one),
            b3: ConvUnit::same(cin, w.b3, one, one, rng),
            widths: w,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.widths.total()
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let y0 = self.b0.forward(x, mode);
        let y1 = self.b1.0.forward(x, mode);
        let y1 = self.b1.1.forward(&y1, mode);
        let y2 = self.b2.0.forward(x, mode);
        let y2 = self.b2.1.forward(&y2, mode);
        let y3 = self.pool.forward(x);
        let y3 = self.b3.forward(&y3, mode);
        Tensor::concat_channels(&[&y0, &y1, &y2, &y3])
    }

    pub fn backward(&mut self, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let w = self.widths;
        let parts = dy.split_channels(&[w.b0, w.b1, w.b2, w.b3]);
        let d0 = self.b0.backward(&parts[0], need_dx);
        let d1 = self.b1.1.backward(&parts[1], true).expect("inner gradient");
        let d1 = self.b1.0.backward(&d1, need_dx);
        let d2 = self.b2.1.backward(&parts[2], true).expect("inner gradient");
        let d2 = self.b2.0.backward(&d2, need_dx);
        let d3 = self.b3.backward(&parts[3], need_dx);
        if !need_dx {
            return None;
        }
        let mut dx = d0.expect("requested");
        dx.add_assign(&d1.expect("requested"));
        dx.add_assign(&d2.expect("requested"));
        dx.add_assign(&self.pool.backward(&d3.expect("requested")));
        Some(dx)
    }
}

impl<T: Scalar> Module<T> for InceptionBlock3d<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<T>) {
        self.b0.visit(&join(prefix, "b0"), v);
        self.b1.0.visit(&join(prefix, "b1_reduce"), v);
        self.b1.1.visit(&join(prefix, "b1"), v);
        self.b2.0.visit(&join(prefix, "b2_reduce"), v);
        self.b2.1.visit(&join(prefix, "b2"), v);
        self.b3.visit(&join(prefix, "b3"), v);
    }
}
