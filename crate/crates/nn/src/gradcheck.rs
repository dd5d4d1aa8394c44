//! Central finite differences for verifying backward passes.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Numerical gradient of `f` at `x` with step `h`.
pub fn numeric_grad<T: Scalar>(x: &Tensor<T>, h: f64, mut f: impl FnMut(&Tensor<T>) -> f64) -> Tensor<T> {
    let mut g = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = T::c(orig.f64() + h);
        let up = f(&probe);
        probe.data_mut()[i] = T::c(orig.f64() - h);
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        g.data_mut()[i] = T::c((up - down) / (2.0 * h));
    }
    g
}

/// Largest elementwise relative error, with `floor` guarding near-zero entries.
pub fn max_rel_error<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, floor: f64) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch in gradient comparison");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let (x, y) = (x.f64(), y.f64());
            (x - y).abs() / x.abs().max(y.abs()).max(floor)
        })
        .fold(0.0, f64::max)
}

/// Fixed pseudo-random weights for turning an output tensor into a scalar loss.
pub fn probe_weights<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            T::c(((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0)
        })
        .collect();
    Tensor::from_vec(shape, data)
}

/// `sum(w * y)`.
pub fn weighted_sum<T: Scalar>(y: &Tensor<T>, w: &Tensor<T>) -> f64 {
    y.data().iter().zip(w.data()).map(|(a, b)| a.f64() * b.f64()).sum()
}
