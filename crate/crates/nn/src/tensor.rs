use crate::scalar::Scalar;

/// Dense row-major n-dimensional array.
///
/// Video batches use the `[N, C, T, H, W]` layout throughout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    /// Panics if `data.len()` does not match the shape volume.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(n, data.len(), "tensor data length {} does not fit shape {:?}", data.len(), shape);
        Self { shape: shape.to_vec(), data }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Self {
        Self::from_vec(shape, data.iter().map(|&x| T::c(x)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(n, self.data.len(), "cannot reshape {:?} into {:?}", self.shape, shape);
        self.shape = shape.to_vec();
        self
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: T) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| U::c(x.f64())).collect() }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    /// Contiguous slice for index `i` along the leading axis.
    pub fn outer(&self, i: usize) -> &[T] {
        let stride = self.data.len() / self.shape[0];
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn outer_mut(&mut self, i: usize) -> &mut [T] {
        let stride = self.data.len() / self.shape[0];
        &mut self.data[i * stride..(i + 1) * stride]
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor<T>]) -> Self {
        assert!(!items.is_empty(), "cannot stack zero tensors");
        let inner = items[0].shape.clone();
        let mut data = Vec::with_capacity(items.len() * items[0].len());
        for t in items {
            assert_eq!(t.shape, inner, "stack: shape mismatch");
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend(inner);
        Self { shape, data }
    }

    /// Concatenates along axis 1 (channels).
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Self {
        let n = parts[0].shape[0];
        let rest: Vec<usize> = parts[0].shape[2..].to_vec();
        let spatial: usize = rest.iter().product();
        let total_c: usize = parts.iter().map(|p| p.shape[1]).sum();
        let mut data = Vec::with_capacity(n * total_c * spatial);
        for b in 0..n {
            for p in parts {
                assert_eq!(p.shape[0], n);
                assert_eq!(&p.shape[2..], &rest[..], "concat: trailing shape mismatch");
                data.extend_from_slice(p.outer(b));
            }
        }
        let mut shape = vec![n, total_c];
        shape.extend(rest);
        Self { shape, data }
    }

    /// Inverse of [`Tensor::concat_channels`].
    pub fn split_channels(&self, sizes: &[usize]) -> Vec<Tensor<T>> {
        let n = self.shape[0];
        let spatial: usize = self.shape[2..].iter().product();
        assert_eq!(sizes.iter().sum::<usize>(), self.shape[1]);
        let mut out: Vec<Vec<T>> = sizes.iter().map(|&c| Vec::with_capacity(n * c * spatial)).collect();
        for b in 0..n {
            let row = self.outer(b);
            let mut off = 0;
            for (k, &c) in sizes.iter().enumerate() {
                out[k].extend_from_slice(&row[off..off + c * spatial]);
                off += c * spatial;
            }
        }
        out.into_iter()
            .zip(sizes)
            .map(|(data, &c)| {
                let mut shape = vec![n, c];
                shape.extend_from_slice(&self.shape[2..]);
                Tensor { shape, data }
            })
            .collect()
    }

    /// `[N, C, T, H, W]` video batch to `[N*T, C, 1, H, W]` frame batch.
    pub fn frames_of_clips(&self) -> Self {
        assert_eq!(self.ndim(), 5, "expected a 5-d clip batch");
        let [n, c, t, h, w] = [self.shape[0], self.shape[1], self.shape[2], self.shape[3], self.shape[4]];
        let hw = h * w;
        let mut data = Vec::with_capacity(self.len());
        for b in 0..n {
            for ti in 0..t {
                for ci in 0..c {
                    let off = ((b * c + ci) * t + ti) * hw;
                    data.extend_from_slice(&self.data[off..off + hw]);
                }
            }
        }
        Self { shape: vec![n * t, c, 1, h, w], data }
    }
}
