use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::init;
use crate::param::{join, Mode, Module, Param, Visitor};
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

/// Per-channel batch normalization over `[N, C, ...]`.
#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache<T>>,
}

#[derive(Clone, Debug)]
struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let n = x.dim(0);
        let c = x.dim(1);
        let s: usize = x.shape()[2..].iter().product();
        let count = (n * s) as f64;
        let eps = T::c(self.eps);
        let mut inv_std = vec![T::zero(); c];
        let mut mean = vec![T::zero(); c];
        match mode {
            Mode::Train => {
                let mut var = vec![T::zero(); c];
                for b in 0..n {
                    let row = x.outer(b);
                    for ci in 0..c {
                        mean[ci] += row[ci * s..(ci + 1) * s].iter().copied().sum();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= T::c(count));
                for b in 0..n {
                    let row = x.outer(b);
                    for ci in 0..c {
                        let m = mean[ci];
                        var[ci] += row[ci * s..(ci + 1) * s].iter().map(|&v| (v - m) * (v - m)).sum();
                    }
                }
                var.iter_mut().for_each(|v| *v /= T::c(count));
                let mom = T::c(self.momentum);
                let unbias = if count > 1.0 { T::c(count / (count - 1.0)) } else { T::one() };
                for ci in 0..c {
                    inv_std[ci] = T::one() / (var[ci] + eps).sqrt();
                    let rm = &mut self.running_mean.data_mut()[ci];
                    *rm = (T::one() - mom) * *rm + mom * mean[ci];
                    let rv = &mut self.running_var.data_mut()[ci];
                    *rv = (T::one() - mom) * *rv + mom * var[ci] * unbias;
                }
            }
            Mode::Eval => {
                for ci in 0..c {
                    mean[ci] = self.running_mean.data()[ci];
                    inv_std[ci] = T::one() / (self.running_var.data()[ci] + eps).sqrt();
                }
            }
        }
        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        for b in 0..n {
            let row = x.outer(b);
            let hrow = xhat.outer_mut(b);
            for ci in 0..c {
                for i in ci * s..(ci + 1) * s {
                    hrow[i] = (row[i] - mean[ci]) * inv_std[ci];
                }
            }
            let yrow = y.outer_mut(b);
            for ci in 0..c {
                let (g, be) = (self.gamma.value.data()[ci], self.beta.value.data()[ci]);
                for i in ci * s..(ci + 1) * s {
                    yrow[i] = g * hrow[i] + be;
                }
            }
        }
        self.cache = Some(BnCache { xhat, inv_std, mode });
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let BnCache { xhat, inv_std, mode } = self.cache.take().expect("batchnorm backward without forward");
        let n = dy.dim(0);
        let c = dy.dim(1);
        let s: usize = dy.shape()[2..].iter().product();
        let m = T::c((n * s) as f64);
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xhat = vec![T::zero(); c];
        for b in 0..n {
            let (drow, hrow) = (dy.outer(b), xhat.outer(b));
            for ci in 0..c {
                for i in ci * s..(ci + 1) * s {
                    sum_dy[ci] += drow[i];
                    sum_dy_xhat[ci] += drow[i] * hrow[i];
                }
            }
        }
        if !self.gamma.frozen {
            for ci in 0..c {
                self.gamma.grad.data_mut()[ci] += sum_dy_xhat[ci];
            }
        }
        if !self.beta.frozen {
            for ci in 0..c {
                self.beta.grad.data_mut()[ci] += sum_dy[ci];
            }
        }
        let mut dx = Tensor::zeros(dy.shape());
        for b in 0..n {
            let (drow, hrow) = (dy.outer(b), xhat.outer(b));
            let xrow = dx.outer_mut(b);
            for ci in 0..c {
                let g = self.gamma.value.data()[ci];
                let k = g * inv_std[ci];
                for i in ci * s..(ci + 1) * s {
                    xrow[i] = match mode {
                        Mode::Eval => k * drow[i],
                        Mode::Train => k / m * (m * drow[i] - sum_dy[ci] - hrow[i] * sum_dy_xhat[ci]),
                    };
                }
            }
        }
        dx
    }
}

impl<T: Scalar> Module<T> for BatchNorm<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<T>) {
        v.param(&join(prefix, "gamma"), &mut self.gamma);
        v.param(&join(prefix, "beta"), &mut self.beta);
        v.buffer(&join(prefix, "running_mean"), &mut self.running_mean);
        v.buffer(&join(prefix, "running_var"), &mut self.running_var);
    }
}

#[derive(Clone, Debug, Default)]
pub struct Relu<T> {
    output: Option<Tensor<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Self { output: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = x.map(|v| v.max(T::zero()));
        self.output = Some(y.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let y = self.output.take().expect("relu backward without forward");
        let data = dy.data().iter().zip(y.data()).map(|(&g, &o)| if o > T::zero() { g } else { T::zero() }).collect();
        Tensor::from_vec(dy.shape(), data)
    }
}

/// Fully connected layer over `[N, in]`.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_features: usize,
    pub out_features: usize,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_features.max(1) as f64).sqrt();
        Self {
            weight: Param::new(init::uniform(rng, &[out_features, in_features], bound)),
            bias: Param::new(init::uniform(rng, &[out_features], bound)),
            in_features,
            out_features,
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.ndim(), 2, "linear expects [N, in]");
        assert_eq!(x.dim(1), self.in_features, "linear input width mismatch");
        let n = x.dim(0);
        let mut y = Tensor::zeros(&[n, self.out_features]);
        for b in 0..n {
            y.outer_mut(b).copy_from_slice(self.bias.value.data());
        }
        gemm(false, true, n, self.out_features, self.in_features, T::one(), x.data(), self.weight.value.data(), T::one(), y.data_mut());
        self.input = Some(x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let x = self.input.take().expect("linear backward without forward");
        let n = x.dim(0);
        if !self.weight.frozen {
            gemm(true, false, self.out_features, self.in_features, n, T::one(), dy.data(), x.data(), T::one(), self.weight.grad.data_mut());
        }
        if !self.bias.frozen {
            for b in 0..n {
                for (g, &d) in self.bias.grad.data_mut().iter_mut().zip(dy.outer(b)) {
                    *g += d;
                }
            }
        }
        let mut dx = Tensor::zeros(&[n, self.in_features]);
        gemm(false, false, n, self.in_features, self.out_features, T::one(), dy.data(), self.weight.value.data(), T::zero(), dx.data_mut());
        dx
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<T>) {
        v.param(&join(prefix, "weight"), &mut self.weight);
        v.param(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Inverted dropout with its own seeded generator.
#[derive(Clone, Debug)]
pub struct Dropout<T> {
    pub p: f64,
    rng: ChaCha8Rng,
    mask: Option<Vec<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(p: f64, seed: u64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout probability must be in [0, 1)");
        Self { p, rng: ChaCha8Rng::seed_from_u64(seed), mask: None }
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        if mode == Mode::Eval || self.p == 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = T::c(1.0 / (1.0 - self.p));
        let mask: Vec<T> = (0..x.len()).map(|_| if self.rng.random::<f64>() < self.p { T::zero() } else { keep }).collect();
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        self.mask = Some(mask);
        Tensor::from_vec(x.shape(), data)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        match self.mask.take() {
            None => dy.clone(),
            Some(mask) => Tensor::from_vec(dy.shape(), dy.data().iter().zip(&mask).map(|(&g, &m)| g * m).collect()),
        }
    }
}

/// Mean over every axis after the channel axis: `[N, C, ...] -> [N, C]`.
#[derive(Clone, Debug, Default)]
pub struct GlobalAvgPool {
    input_shape: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self { input_shape: None }
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let (n, c) = (x.dim(0), x.dim(1));
        let s: usize = x.shape()[2..].iter().product();
        let inv = T::c(1.0 / s as f64);
        let data = x.data().chunks(s).map(|ch| ch.iter().copied().sum::<T>() * inv).collect();
        self.input_shape = Some(x.shape().to_vec());
        Tensor::from_vec(&[n, c], data)
    }

    pub fn backward<T: Scalar>(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let shape = self.input_shape.take().expect("pool backward without forward");
        let s: usize = shape[2..].iter().product();
        let inv = T::c(1.0 / s as f64);
        let mut data = Vec::with_capacity(dy.len() * s);
        for &g in dy.data() {
            data.extend(std::iter::repeat_n(g * inv, s));
        }
        Tensor::from_vec(&shape, data)
    }
}

/// Max pooling over `[N, C, T, H, W]`; padded cells never win.
#[derive(Clone, Debug)]
pub struct MaxPool3d {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool3d {
    pub fn new(kernel: [usize; 3], stride: [usize; 3], padding: [usize; 3]) -> Self {
        Self { kernel, stride, padding, cache: None }
    }

    pub fn output_dims(&self, dims: [usize; 3]) -> [usize; 3] {
        std::array::from_fn(|a| super::conv::conv_out_len(dims[a], self.kernel[a], self.stride[a], self.padding[a]))
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let (n, c) = (x.dim(0), x.dim(1));
        let dims = [x.dim(2), x.dim(3), x.dim(4)];
        let o = self.output_dims(dims);
        let mut y = Tensor::zeros(&[n, c, o[0], o[1], o[2]]);
        let mut arg = Vec::with_capacity(y.len());
        let vol = dims[0] * dims[1] * dims[2];
        let ys = y.data_mut();
        let mut yi = 0;
        for plane in 0..n * c {
            let base = plane * vol;
            for ot in 0..o[0] {
                for oh in 0..o[1] {
                    for ow in 0..o[2] {
                        let mut best = T::neg_infinity();
                        let mut best_i = usize::MAX;
                        for dt in 0..self.kernel[0] {
                            let it = (ot * self.stride[0] + dt) as isize - self.padding[0] as isize;
                            if it < 0 || it as usize >= dims[0] {
                                continue;
                            }
                            for dh in 0..self.kernel[1] {
                                let ih = (oh * self.stride[1] + dh) as isize - self.padding[1] as isize;
                                if ih < 0 || ih as usize >= dims[1] {
                                    continue;
                                }
                                for dw in 0..self.kernel[2] {
                                    let iw = (ow * self.stride[2] + dw) as isize - self.padding[2] as isize;
                                    if iw < 0 || iw as usize >= dims[2] {
                                        continue;
                                    }
                                    let idx = base + ((it as usize * dims[1]) + ih as usize) * dims[2] + iw as usize;
                                    let v = x.data()[idx];
                                    if v > best || best_i == usize::MAX {
                                        best = v;
                                        best_i = idx;
                                    }
                                }
                            }
                        }
                        ys[yi] = best;
                        arg.push(best_i);
                        yi += 1;
                    }
                }
            }
        }
        self.cache = Some((x.shape().to_vec(), arg));
        y
    }

    pub fn backward<T: Scalar>(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let (shape, arg) = self.cache.take().expect("maxpool backward without forward");
        let mut dx = Tensor::zeros(&shape);
        for (&g, &i) in dy.data().iter().zip(&arg) {
            dx.data_mut()[i] += g;
        }
        dx
    }
}
