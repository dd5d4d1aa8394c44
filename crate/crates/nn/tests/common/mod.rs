#![allow(dead_code)]

use stdeep_nn::gradcheck::max_rel_error;
use stdeep_nn::{Module, Param, Tensor, Visitor};

struct Names(Vec<(String, usize, bool)>);
impl Visitor<f64> for Names {
    fn param(&mut self, name: &str, p: &mut Param<f64>) {
        self.0.push((name.to_string(), p.numel(), p.frozen));
    }
}

struct Nudge<'a> {
    name: &'a str,
    idx: usize,
    delta: f64,
}
impl Visitor<f64> for Nudge<'_> {
    fn param(&mut self, name: &str, p: &mut Param<f64>) {
        if name == self.name {
            p.value.data_mut()[self.idx] += self.delta;
        }
    }
}

struct Grads(Vec<(String, Tensor<f64>)>);
impl Visitor<f64> for Grads {
    fn param(&mut self, name: &str, p: &mut Param<f64>) {
        self.0.push((name.to_string(), p.grad.clone()));
    }
}

pub fn grads<M: Module<f64>>(m: &mut M) -> Vec<(String, Tensor<f64>)> {
    let mut g = Grads(Vec::new());
    m.visit("", &mut g);
    g.0
}

/// Compares analytic parameter gradients against central differences on up to
/// `per_tensor` entries of every trainable tensor. Returns the worst relative error.
pub fn check_params<M: Module<f64>>(
    model: &mut M,
    per_tensor: usize,
    mut loss: impl FnMut(&mut M) -> f64,
    mut analytic: impl FnMut(&mut M),
) -> f64 {
    model.zero_grad();
    analytic(model);
    let grads = grads(model);
    let mut names = Names(Vec::new());
    model.visit("", &mut names);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for ((name, n, frozen), (_, g)) in names.0.iter().zip(&grads) {
        if *frozen {
            assert!(g.data().iter().all(|&x| x == 0.0), "frozen {name} accumulated gradient");
            continue;
        }
        let step = (*n / per_tensor).max(1);
        for idx in (0..*n).step_by(step).take(per_tensor) {
            model.visit("", &mut Nudge { name, idx, delta: h });
            let up = loss(model);
            model.visit("", &mut Nudge { name, idx, delta: -2.0 * h });
            let down = loss(model);
            model.visit("", &mut Nudge { name, idx, delta: h });
            let num = (up - down) / (2.0 * h);
            let ana = g.data()[idx];
            let err = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-4);
            if err > 1e-3 {
                eprintln!("{name}[{idx}]: numeric {num} analytic {ana}");
            }
            worst = worst.max(err);
        }
    }
    worst
}

pub fn rel(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    max_rel_error(a, b, 1e-4)
}
