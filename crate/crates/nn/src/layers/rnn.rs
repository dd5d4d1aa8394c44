//! Recurrent layers over `[N, T, D]` sequences with full backpropagation through time.

use rand::Rng;

use crate::init;
use crate::param::{join, Module, Param, Visitor};
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `[N, T, D]` with the time axis reversed.
pub fn reverse_time<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (n, t, d) = (x.dim(0), x.dim(1), x.dim(2));
    let mut out = Tensor::zeros(x.shape());
    for b in 0..n {
        for s in 0..t {
            let src = (b * t + s) * d;
            let dst = (b * t + (t - 1 - s)) * d;
            out.data_mut()[dst..dst + d].copy_from_slice(&x.data()[src..src + d]);
        }
    }
    out
}

/// Copies time step `t` of `[N, T, W]` into a contiguous `[N, W]` buffer.
fn gather_step<T: Scalar>(src: &[T], n: usize, steps: usize, width: usize, t: usize, dst: &mut [T]) {
    for b in 0..n {
        let s = (b * steps + t) * width;
        dst[b * width..(b + 1) * width].copy_from_slice(&src[s..s + width]);
    }
}

fn scatter_step<T: Scalar>(src: &[T], n: usize, steps: usize, width: usize, t: usize, dst: &mut [T]) {
    for b in 0..n {
        let s = (b * steps + t) * width;
        dst[s..s + width].copy_from_slice(&src[b * width..(b + 1) * width]);
    }
}

/// Single-layer unidirectional LSTM, gate order `i, f, g, o`.
#[derive(Clone, Debug)]
pub struct Lstm<T> {
    pub w_ih: Param<T>,
    pub w_hh: Param<T>,
    pub bias: Param<T>,
    pub input_size: usize,
    pub hidden: usize,
    cache: Option<LstmCache<T>>,
}

#[derive(Clone, Debug)]
struct LstmCache<T> {
    x: Tensor<T>,
    /// Activated gates per step, `[N, 4H]` each.
    gates: Vec<Vec<T>>,
    /// Cell states `c_0..c_T`.
    cells: Vec<Vec<T>>,
    /// Hidden states `h_0..h_T`.
    hiddens: Vec<Vec<T>>,
}

impl<T: Scalar> Lstm<T> {
    pub fn new(input_size: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            w_ih: Param::new(init::uniform(rng, &[4 * hidden, input_size], bound)),
            w_hh: Param::new(init::uniform(rng, &[4 * hidden, hidden], bound)),
            bias: Param::new(init::uniform(rng, &[4 * hidden], bound)),
            input_size,
            hidden,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.ndim(), 3, "lstm expects [N, T, D]");
        assert_eq!(x.dim(2), self.input_size, "lstm input width mismatch");
        let (n, steps, h) = (x.dim(0), x.dim(1), self.hidden);
        let g4 = 4 * h;
        // Input projections for every step at once.
        let mut xproj = vec![T::zero(); n * steps * g4];
        gemm(false, true, n * steps, g4, self.input_size, T::one(), x.data(), self.w_ih.value.data(), T::zero(), &mut xproj);
        let mut gates = Vec::with_capacity(steps);
        let mut cells = vec![vec![T::zero(); n * h]];
        let mut hiddens = vec![vec![T::zero(); n * h]];
        let mut out = Tensor::zeros(&[n, steps, h]);
        let mut pre = vec![T::zero(); n * g4];
        for t in 0..steps {
            gather_step(&xproj, n, steps, g4, t, &mut pre);
            for b in 0..n {
                for (p, &bv) in pre[b * g4..(b + 1) * g4].iter_mut().zip(self.bias.value.data()) {
                    *p += bv;
                }
            }
            gemm(false, true, n, g4, h, T::one(), &hiddens[t], self.w_hh.value.data(), T::one(), &mut pre);
            let mut act = pre.clone();
            let mut c = vec![T::zero(); n * h];
            let mut hv = vec![T::zero(); n * h];
            for b in 0..n {
                let a = &mut act[b * g4..(b + 1) * g4];
                for j in 0..h {
                    a[j] = sigmoid(a[j]);
                    a[h + j] = sigmoid(a[h + j]);
                    a[2 * h + j] = a[2 * h + j].tanh();
                    a[3 * h + j] = sigmoid(a[3 * h + j]);
                    let cv = a[h + j] * cells[t][b * h + j] + a[j] * a[2 * h + j];
                    c[b * h + j] = cv;
                    hv[b * h + j] = a[3 * h + j] * cv.tanh();
                }
            }
            scatter_step(&hv, n, steps, h, t, out.data_mut());
            gates.push(act);
            cells.push(c);
            hiddens.push(hv);
        }
        self.cache = Some(LstmCache { x: x.clone(), gates, cells, hiddens });
        out
    }

    /// `dy` is the gradient w.r.t. every step's output, `[N, T, H]`.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let LstmCache { x, gates, cells, hiddens } = self.cache.take().expect("lstm backward without forward");
        let (n, steps, h) = (x.dim(0), x.dim(1), self.hidden);
        let g4 = 4 * h;
        let mut dpre_all = vec![T::zero(); n * steps * g4];
        let mut dh_next = vec![T::zero(); n * h];
        let mut dc_next = vec![T::zero(); n * h];
        let mut dh = vec![T::zero(); n * h];
        let mut dpre = vec![T::zero(); n * g4];
        for t in (0..steps).rev() {
            gather_step(dy.data(), n, steps, h, t, &mut dh);
            let a = &gates[t];
            for b in 0..n {
                for j in 0..h {
                    let k = b * h + j;
                    let dhk = dh[k] + dh_next[k];
                    let (i, f, g, o) = (a[b * g4 + j], a[b * g4 + h + j], a[b * g4 + 2 * h + j], a[b * g4 + 3 * h + j]);
                    let tc = cells[t + 1][k].tanh();
                    let d_o = dhk * tc;
                    let dc = dc_next[k] + dhk * o * (T::one() - tc * tc);
                    let di = dc * g;
                    let dg = dc * i;
                    let df = dc * cells[t][k];
                    dc_next[k] = dc * f;
                    let row = &mut dpre[b * g4..(b + 1) * g4];
                    row[j] = di * i * (T::one() - i);
                    row[h + j] = df * f * (T::one() - f);
                    row[2 * h + j] = dg * (T::one() - g * g);
                    row[3 * h + j] = d_o * o * (T::one() - o);
                }
            }
            if !self.w_hh.frozen {
                gemm(true, false, g4, h, n, T::one(), &dpre, &hiddens[t], T::one(), self.w_hh.grad.data_mut());
            }
            gemm(false, false, n, h, g4, T::one(), &dpre, self.w_hh.value.data(), T::zero(), &mut dh_next);
            scatter_step(&dpre, n, steps, g4, t, &mut dpre_all);
        }
        if !self.w_ih.frozen {
            gemm(true, false, g4, self.input_size, n * steps, T::one(), &dpre_all, x.data(), T::one(), self.w_ih.grad.data_mut());
        }
        if !self.bias.frozen {
            for row in dpre_all.chunks(g4) {
                for (g, &d) in self.bias.grad.data_mut().iter_mut().zip(row) {
                    *g += d;
                }
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        gemm(false, false, n * steps, self.input_size, g4, T::one(), &dpre_all, self.w_ih.value.data(), T::zero(), dx.data_mut());
        dx
    }
}

impl<T: Scalar> Module<T> for Lstm<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<T>) {
        v.param(&join(prefix, "w_ih"), &mut self.w_ih);
        v.param(&join(prefix, "w_hh"), &mut self.w_hh);
        v.param(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Single-direction GRU with separate input and hidden biases, gate order `r, z, n`.
#[derive(Clone, Debug)]
pub struct Gru<T> {
    pub w_ih: Param<T>,
    pub w_hh: Param<T>,
    pub b_ih: Param<T>,
    pub b_hh: Param<T>,
    pub input_size: usize,
    pub hidden: usize,
    cache: Option<GruCache<T>>,
}

#[derive(Clone, Debug)]
struct GruCache<T> {
    x: Tensor<T>,
    /// `r, z, n` activations per step, `[N, 3H]`.
    gates: Vec<Vec<T>>,
    /// Hidden-side candidate projection `W_hn h + b_hn` per step, `[N, H]`.
    hn: Vec<Vec<T>>,
    hiddens: Vec<Vec<T>>,
}

impl<T: Scalar> Gru<T> {
    pub fn new(input_size: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            w_ih: Param::new(init::uniform(rng, &[3 * hidden, input_size], bound)),
            w_hh: Param::new(init::uniform(rng, &[3 * hidden, hidden], bound)),
            b_ih: Param::new(init::uniform(rng, &[3 * hidden], bound)),
            b_hh: Param::new(init::uniform(rng, &[3 * hidden], bound)),
            input_size,
            hidden,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.ndim(), 3, "gru expects [N, T, D]");
        assert_eq!(x.dim(2), self.input_size, "gru input width mismatch");
        let (n, steps, h) = (x.dim(0), x.dim(1), self.hidden);
        let g3 = 3 * h;
        let mut xproj = vec![T::zero(); n * steps * g3];
        gemm(false, true, n * steps, g3, self.input_size, T::one(), x.data(), self.w_ih.value.data(), T::zero(), &mut xproj);
        let mut gates = Vec::with_capacity(steps);
        let mut hns = Vec::with_capacity(steps);
        let mut hiddens = vec![vec![T::zero(); n * h]];
        let mut out = Tensor::zeros(&[n, steps, h]);
        let mut gi = vec![T::zero(); n * g3];
        let mut gh = vec![T::zero(); n * g3];
        for t in 0..steps {
            gather_step(&xproj, n, steps, g3, t, &mut gi);
            for b in 0..n {
                gh[b * g3..(b + 1) * g3].copy_from_slice(self.b_hh.value.data());
                for (p, &bv) in gi[b * g3..(b + 1) * g3].iter_mut().zip(self.b_ih.value.data()) {
                    *p += bv;
                }
            }
            gemm(false, true, n, g3, h, T::one(), &hiddens[t], self.w_hh.value.data(), T::one(), &mut gh);
            let mut act = vec![T::zero(); n * g3];
            let mut hn = vec![T::zero(); n * h];
            let mut hv = vec![T::zero(); n * h];
            for b in 0..n {
                for j in 0..h {
                    let (o, k) = (b * g3, b * h + j);
                    let r = sigmoid(gi[o + j] + gh[o + j]);
                    let z = sigmoid(gi[o + h + j] + gh[o + h + j]);
                    let hnk = gh[o + 2 * h + j];
                    let nn = (gi[o + 2 * h + j] + r * hnk).tanh();
                    act[o + j] = r;
                    act[o + h + j] = z;
                    act[o + 2 * h + j] = nn;
                    hn[k] = hnk;
                    hv[k] = (T::one() - z) * nn + z * hiddens[t][k];
                }
            }
            scatter_step(&hv, n, steps, h, t, out.data_mut());
            gates.push(act);
            hns.push(hn);
            hiddens.push(hv);
        }
        self.cache = Some(GruCache { x: x.clone(), gates, hn: hns, hiddens });
        out
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let GruCache { x, gates, hn, hiddens } = self.cache.take().expect("gru backward without forward");
        let (n, steps, h) = (x.dim(0), x.dim(1), self.hidden);
        let g3 = 3 * h;
        let mut dgi_all = vec![T::zero(); n * steps * g3];
        let mut dh_next = vec![T::zero(); n * h];
        let mut dh = vec![T::zero(); n * h];
        let mut dgi = vec![T::zero(); n * g3];
        let mut dgh = vec![T::zero(); n * g3];
        for t in (0..steps).rev() {
            gather_step(dy.data(), n, steps, h, t, &mut dh);
            let a = &gates[t];
            let mut dh_prev = vec![T::zero(); n * h];
            for b in 0..n {
                for j in 0..h {
                    let (o, k) = (b * g3, b * h + j);
                    let (r, z, nn) = (a[o + j], a[o + h + j], a[o + 2 * h + j]);
                    let dhk = dh[k] + dh_next[k];
                    let hp = hiddens[t][k];
                    let dn = dhk * (T::one() - z);
                    let dz = dhk * (hp - nn);
                    dh_prev[k] = dhk * z;
                    let dpre_n = dn * (T::one() - nn * nn);
                    let dr = dpre_n * hn[t][k];
                    let dpre_r = dr * r * (T::one() - r);
                    let dpre_z = dz * z * (T::one() - z);
                    dgi[o + j] = dpre_r;
                    dgi[o + h + j] = dpre_z;
                    dgi[o + 2 * h + j] = dpre_n;
                    dgh[o + j] = dpre_r;
                    dgh[o + h + j] = dpre_z;
                    dgh[o + 2 * h + j] = dpre_n * r;
                }
            }
            if !self.w_hh.frozen {
                gemm(true, false, g3, h, n, T::one(), &dgh, &hiddens[t], T::one(), self.w_hh.grad.data_mut());
            }
            if !self.b_hh.frozen {
                for row in dgh.chunks(g3) {
                    for (g, &d) in self.b_hh.grad.data_mut().iter_mut().zip(row) {
                        *g += d;
                    }
                }
            }
            gemm(false, false, n, h, g3, T::one(), &dgh, self.w_hh.value.data(), T::one(), &mut dh_prev);
            dh_next = dh_prev;
            scatter_step(&dgi, n, steps, g3, t, &mut dgi_all);
        }
        if !self.w_ih.frozen {
            gemm(true, false, g3, self.input_size, n * steps, T::one(), &dgi_all, x.data(), T::one(), self.w_ih.grad.data_mut());
        }
        if !self.b_ih.frozen {
            for row in dgi_all.chunks(g3) {
                for (g, &d) in self.b_ih.grad.data_mut().iter_mut().zip(row) {
                    *g += d;
                }
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        gemm(false, false, n * steps, self.input_size, g3, T::one(), &dgi_all, self.w_ih.value.data(), T::zero(), dx.data_mut());
        dx
    }
}

impl<T: Scalar> Module<T> for Gru<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<T>) {
        v.param(&join(prefix, "w_ih"), &mut self.w_ih);
        v.param(&join(prefix, "w_hh"), &mut self.w_hh);
        v.param(&join(prefix, "b_ih"), &mut self.b_ih);
        v.param(&join(prefix, "b_hh"), &mut self.b_hh);
    }
}

/// Bidirectional GRU; output `[N, T, 2H]` with forward features first.
#[derive(Clone, Debug)]
pub struct BiGru<T> {
    pub fwd: Gru<T>,
    pub bwd: Gru<T>,
}

impl<T: Scalar> BiGru<T> {
    pub fn new(input_size: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self { fwd: Gru::new(input_size, hidden, rng), bwd: Gru::new(input_size, hidden, rng) }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let f = self.fwd.forward(x);
        let b = reverse_time(&self.bwd.forward(&reverse_time(x)));
        let (n, steps, h) = (x.dim(0), x.dim(1), self.hidden());
        let mut out = Tensor::zeros(&[n, steps, 2 * h]);
        for (row, (fr, br)) in out.data_mut().chunks_mut(2 * h).zip(f.data().chunks(h).zip(b.data().chunks(h))) {
            row[..h].copy_from_slice(fr);
            row[h..].copy_from_slice(br);
        }
        out
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let (n, steps, h) = (dy.dim(0), dy.dim(1), self.hidden());
        let mut df = Tensor::zeros(&[n, steps, h]);
        let mut db = Tensor::zeros(&[n, steps, h]);
        for ((row, fr), br) in dy.data().chunks(2 * h).zip(df.data_mut().chunks_mut(h)).zip(db.data_mut().chunks_mut(h)) {
            fr.copy_from_slice(&row[..h]);
            br.copy_from_slice(&row[h..]);
        }
        let mut dx = self.fwd.backward(&df);
        let dxb = reverse_time(&self.bwd.backward(&reverse_time(&db)));
        dx.add_assign(&dxb);
        dx
    }
}

impl<T: Scalar> Module<T> for BiGru<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<T>) {
        self.fwd.visit(&join(prefix, "fwd"), v);
        self.bwd.visit(&join(prefix, "bwd"), v);
    }
}
