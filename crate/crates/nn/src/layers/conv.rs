use rand::Rng;

use crate::init;
use crate::param::{join, Module, Param, Visitor};
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

/// 3-D convolution over `[N, C, T, H, W]`.
///
/// A 2-D convolution is the special case `kernel[0] == 1` on depth-1 input.
#[derive(Clone, Debug)]
pub struct Conv3d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    input: Option<Tensor<T>>,
}

#[derive(Clone, Copy)]
struct Geometry {
    channels: usize,
    dims: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
    out: [usize; 3],
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kernel.iter().product::<usize>()
    }

    fn plane(&self) -> usize {
        self.out.iter().product()
    }

    /// Input offset for output coordinate `o` along `axis` at kernel tap `k`.
    #[inline]
    fn src(&self, axis: usize, o: usize, k: usize) -> Option<usize> {
        let i = (o * self.stride[axis] + k) as isize - self.padding[axis] as isize;
        (i >= 0 && (i as usize) < self.dims[axis]).then_some(i as usize)
    }
}

fn im2col<T: Scalar>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let [_, h, w] = g.dims;
    let [kt, kh, kw] = g.kernel;
    let [to, ho, wo] = g.out;
    let plane = g.plane();
    let mut row = 0;
    for ci in 0..g.channels {
        for dt in 0..kt {
            for dh in 0..kh {
                for dw in 0..kw {
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    let mut idx = 0;
                    for ot in 0..to {
                        let Some(it) = g.src(0, ot, dt) else {
                            dst[idx..idx + ho * wo].fill(T::zero());
                            idx += ho * wo;
                            continue;
                        };
                        for oh in 0..ho {
                            let Some(ih) = g.src(1, oh, dh) else {
                                dst[idx..idx + wo].fill(T::zero());
                                idx += wo;
                                continue;
                            };
                            let base = ((ci * g.dims[0] + it) * h + ih) * w;
                            for ow in 0..wo {
                                dst[idx] = match g.src(2, ow, dw) {
                                    Some(iw) => x[base + iw],
                                    None => T::zero(),
                                };
                                idx += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &Geometry, dx: &mut [T]) {
    let [_, h, w] = g.dims;
    let [kt, kh, kw] = g.kernel;
    let [to, ho, wo] = g.out;
    let plane = g.plane();
    let mut row = 0;
    for ci in 0..g.channels {
        for dt in 0..kt {
            for dh in 0..kh {
                for dw in 0..kw {
                    let src = &cols[row * plane..(row + 1) * plane];
                    let mut idx = 0;
                    for ot in 0..to {
                        let Some(it) = g.src(0, ot, dt) else {
                            idx += ho * wo;
                            continue;
                        };
                        for oh in 0..ho {
                            let Some(ih) = g.src(1, oh, dh) else {
                                idx += wo;
                                continue;
                            };
                            let base = ((ci * g.dims[0] + it) * h + ih) * w;
                            for ow in 0..wo {
                                if let Some(iw) = g.src(2, ow, dw) {
                                    dx[base + iw] += src[idx];
                                }
                                idx += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (len + 2 * padding).saturating_sub(kernel) / stride + 1
}

impl<T: Scalar> Conv3d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel.iter().product::<usize>();
        let shape = [out_channels, in_channels, kernel[0], kernel[1], kernel[2]];
        let weight = Param::new(init::he_normal(rng, &shape, fan_in));
        let bias = bias.then(|| Param::new(Tensor::zeros(&[out_channels])));
        Self { weight, bias, in_channels, out_channels, kernel, stride, padding, input: None }
    }

    pub fn output_dims(&self, dims: [usize; 3]) -> [usize; 3] {
        std::array::from_fn(|a| conv_out_len(dims[a], self.kernel[a], self.stride[a], self.padding[a]))
    }

    fn geometry(&self, x: &Tensor<T>) -> Geometry {
        assert_eq!(x.ndim(), 5, "conv3d expects [N, C, T, H, W], got {:?}", x.shape());
        assert_eq!(x.dim(1), self.in_channels, "conv3d channel mismatch");
        let dims = [x.dim(2), x.dim(3), x.dim(4)];
        for a in 0..3 {
            assert!(
                dims[a] + 2 * self.padding[a] >= self.kernel[a],
                "conv3d input {:?} smaller than kernel {:?}",
                dims,
                self.kernel
            );
        }
        Geometry {
            channels: self.in_channels,
            dims,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            out: self.output_dims(dims),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.apply(x);
        self.input = Some(x.clone());
        y
    }

    /// Forward pass without caching the input.
    pub fn apply(&self, x: &Tensor<T>) -> Tensor<T> {
        let g = self.geometry(x);
        let n = x.dim(0);
        let (rows, plane) = (g.rows(), g.plane());
        let mut out = Tensor::zeros(&[n, self.out_channels, g.out[0], g.out[1], g.out[2]]);
        let mut cols = vec![T::zero(); rows * plane];
        for b in 0..n {
            im2col(x.outer(b), &g, &mut cols);
            let y = out.outer_mut(b);
            gemm(false, false, self.out_channels, plane, rows, T::one(), self.weight.value.data(), &cols, T::zero(), y);
            if let Some(bias) = &self.bias {
                for (co, chunk) in y.chunks_mut(plane).enumerate() {
                    let bv = bias.value.data()[co];
                    chunk.iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients; returns the input gradient if requested.
    pub fn backward(&mut self, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let x = self.input.take().expect("conv3d backward without forward");
        let g = self.geometry(&x);
        let n = x.dim(0);
        let (rows, plane) = (g.rows(), g.plane());
        let mut cols = vec![T::zero(); rows * plane];
        let mut dcols = vec![T::zero(); rows * plane];
        let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
        for b in 0..n {
            let dyb = dy.outer(b);
            if !self.weight.frozen {
                im2col(x.outer(b), &g, &mut cols);
                gemm(false, true, self.out_channels, rows, plane, T::one(), dyb, &cols, T::one(), self.weight.grad.data_mut());
            }
            if let Some(bias) = self.bias.as_mut().filter(|p| !p.frozen) {
                for (co, chunk) in dyb.chunks(plane).enumerate() {
                    bias.grad.data_mut()[co] += chunk.iter().copied().sum();
                }
            }
            if let Some(dx) = dx.as_mut() {
                gemm(true, false, rows, plane, self.out_channels, T::one(), self.weight.value.data(), dyb, T::zero(), &mut dcols);
                col2im(&dcols, &g, dx.outer_mut(b));
            }
        }
        dx
    }
}

impl<T: Scalar> Module<T> for Conv3d<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<T>) {
        v.param(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = self.bias.as_mut() {
            v.param(&join(prefix, "bias"), b);
        }
    }
}
