use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Forward-pass mode. Batch norm and dropout behave differently in each.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable array with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// Frozen parameters never accumulate gradient and are skipped by optimizers.
    pub frozen: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad, frozen: false }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

/// Receives every named parameter and buffer of a module tree.
pub trait Visitor<T: Scalar> {
    fn param(&mut self, name: &str, param: &mut Param<T>);

    /// Non-trainable state such as batch-norm running statistics.
    fn buffer(&mut self, _name: &str, _buffer: &mut Tensor<T>) {}
}

/// Anything owning parameters.
pub trait Module<T: Scalar> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<T>);

    fn zero_grad(&mut self) {
        struct Z;
        impl<T: Scalar> Visitor<T> for Z {
            fn param(&mut self, _: &str, p: &mut Param<T>) {
                p.zero_grad();
            }
        }
        self.visit("", &mut Z);
    }

    fn set_frozen(&mut self, frozen: bool) {
        struct F(bool);
        impl<T: Scalar> Visitor<T> for F {
            fn param(&mut self, _: &str, p: &mut Param<T>) {
                p.frozen = self.0;
            }
        }
        self.visit("", &mut F(frozen));
    }

    fn param_count(&mut self) -> usize {
        struct C(usize);
        impl<T: Scalar> Visitor<T> for C {
            fn param(&mut self, _: &str, p: &mut Param<T>) {
                self.0 += p.numel();
            }
        }
        let mut c = C(0);
        self.visit("", &mut c);
        c.0
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Collects `(name, value)` copies of all parameters and buffers.
pub fn named_tensors<T: Scalar, M: Module<T> + ?Sized>(module: &mut M) -> Vec<(String, Tensor<T>)> {
    struct Collect<T>(Vec<(String, Tensor<T>)>);
    impl<T: Scalar> Visitor<T> for Collect<T> {
        fn param(&mut self, name: &str, p: &mut Param<T>) {
            self.0.push((name.to_string(), p.value.clone()));
        }
        fn buffer(&mut self, name: &str, b: &mut Tensor<T>) {
            self.0.push((name.to_string(), b.clone()));
        }
    }
    let mut c = Collect(Vec::new());
    module.visit("", &mut c);
    c.0
}
