use std::collections::HashMap;

use crate::param::{Module, Param, Visitor};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adam with L2 weight decay folded into the gradient.
///
/// Frozen parameters are skipped entirely, moments included.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, moments: HashMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update from the gradients accumulated in `module`.
    pub fn step<T: Scalar, M: Module<T> + ?Sized>(&mut self, module: &mut M) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        struct Update<'a> {
            opt: &'a mut Adam,
            bc1: f64,
            bc2: f64,
        }
        impl<T: Scalar> Visitor<T> for Update<'_> {
            fn param(&mut self, name: &str, p: &mut Param<T>) {
                if p.frozen {
                    return;
                }
                let o = &mut *self.opt;
                let n = p.numel();
                let (m, v) = o.moments.entry(name.to_string()).or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
                let grads = p.grad.data();
                let values = p.value.data_mut();
                for i in 0..n {
                    let w = values[i].f64();
                    let g = grads[i].f64() + o.weight_decay * w;
                    m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g;
                    v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g * g;
                    let mh = m[i] / self.bc1;
                    let vh = v[i] / self.bc2;
                    values[i] = T::c(w - o.lr * mh / (vh.sqrt() + o.eps));
                }
            }
        }
        module.visit("", &mut Update { opt: self, bc1, bc2 });
    }
}

/// Global L2 norm of all trainable gradients (used for divergence checks).
pub fn grad_norm<T: Scalar, M: Module<T> + ?Sized>(module: &mut M) -> f64 {
    struct N(f64);
    impl<T: Scalar> Visitor<T> for N {
        fn param(&mut self, _: &str, p: &mut Param<T>) {
            if !p.frozen {
                self.0 += p.grad.data().iter().map(|g| g.f64() * g.f64()).sum::<f64>();
            }
        }
    }
    let mut n = N(0.0);
    module.visit("", &mut n);
    n.0.sqrt()
}

/// Snapshot of every trainable value, for comparing before/after an update.
pub fn trainable_values<T: Scalar, M: Module<T> + ?Sized>(module: &mut M) -> Vec<(String, bool, Tensor<T>)> {
    struct S<T>(Vec<(String, bool, Tensor<T>)>);
    impl<T: Scalar> Visitor<T> for S<T> {
        fn param(&mut self, name: &str, p: &mut Param<T>) {
            self.0.push((name.to_string(), p.frozen, p.value.clone()));
        }
    }
    let mut s = S(Vec::new());
    module.visit("", &mut s);
    s.0
}
