//! Weight initializers.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn normal<T: Scalar>(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::c(z * std)
        })
        .collect();
    Tensor::from_vec(shape, data)
}

/// Kaiming normal initialization for ReLU networks.
pub fn he_normal<T: Scalar>(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    normal(rng, shape, (2.0 / fan_in.max(1) as f64).sqrt())
}

pub fn uniform<T: Scalar>(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Tensor::from_vec(shape, (0..n).map(|_| T::c(dist.sample(rng))).collect())
}
