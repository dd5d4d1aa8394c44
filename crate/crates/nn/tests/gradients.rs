mod common;

use common::{check_params, rel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stdeep_nn::blocks::{ConvUnit, InceptionBlock3d, InceptionWidths, ResidualBlock3d};
use stdeep_nn::gradcheck::{numeric_grad, probe_weights, weighted_sum};
use stdeep_nn::init;
use stdeep_nn::layers::{BatchNorm, BiGru, Conv3d, GlobalAvgPool, Gru, Linear, Lstm, MaxPool3d};
use stdeep_nn::{Encoder, EncoderSpec, Family, Mode, Module, Tensor};

const TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn input(shape: &[usize], seed: u64) -> Tensor<f64> {
    init::normal(&mut rng(seed), shape, 1.0)
}

#[test]
fn conv3d_gradients() {
    let mut conv = Conv3d::<f64>::new(2, 3, [3, 3, 3], [1, 2, 1], [1, 1, 0], true, &mut rng(1));
    let x = input(&[2, 2, 3, 5, 4], 2);
    let y = conv.forward(&x);
    let w = probe_weights(y.shape(), 3);
    conv.zero_grad();
    conv.forward(&x);
    let dx = conv.backward(&w, true).unwrap();
    let probe = conv.clone();
    let num = numeric_grad(&x, 1e-5, |xp| weighted_sum(&probe.apply(xp), &w));
    assert!(rel(&dx, &num) < TOL);
    let err = check_params(&mut conv, 30, |c| weighted_sum(&c.apply(&x), &w), |c| {
        c.forward(&x);
        c.backward(&w, false);
    });
    assert!(err < TOL, "conv param error {err}");
}

#[test]
fn batchnorm_gradients_in_both_modes() {
    for mode in [Mode::Train, Mode::Eval] {
        let mut bn = BatchNorm::<f64>::new(3);
        bn.running_mean = Tensor::from_vec(&[3], vec![0.1, -0.2, 0.3]);
        bn.running_var = Tensor::from_vec(&[3], vec![0.5, 1.5, 2.0]);
        bn.gamma.value = Tensor::from_vec(&[3], vec![1.2, 0.7, -0.4]);
        let x = input(&[4, 3, 2, 2, 2], 5);
        let w = probe_weights(&[4, 3, 2, 2, 2], 6);
        let base = bn.clone();
        bn.forward(&x, mode);
        let dx = bn.backward(&w);
        let num = numeric_grad(&x, 1e-5, |xp| weighted_sum(&base.clone().forward(xp, mode), &w));
        assert!(rel(&dx, &num) < TOL, "{mode:?}");
        let mut fresh = base.clone();
        let err = check_params(&mut fresh, 3, |b| weighted_sum(&b.clone().forward(&x, mode), &w), |b| {
            b.forward(&x, mode);
            b.backward(&w);
        });
        assert!(err < TOL, "{mode:?} param error {err}");
    }
}

#[test]
fn batchnorm_running_statistics() {
    let mut bn = BatchNorm::<f64>::new(1);
    let x = Tensor::from_vec(&[4, 1], vec![1.0, 2.0, 3.0, 4.0]);
    bn.forward(&x, Mode::Train);
    // mean 2.5, unbiased variance 5/3
    assert!((bn.running_mean.data()[0] - 0.25).abs() < 1e-12);
    assert!((bn.running_var.data()[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
}

#[test]
fn linear_and_pool_gradients() {
    let mut lin = Linear::<f64>::new(5, 3, &mut rng(7));
    let x = input(&[4, 5], 8);
    let w = probe_weights(&[4, 3], 9);
    lin.forward(&x);
    let dx = lin.backward(&w);
    let base = lin.clone();
    let num = numeric_grad(&x, 1e-5, |xp| weighted_sum(&base.clone().forward(xp), &w));
    assert!(rel(&dx, &num) < TOL);
    let err = check_params(&mut lin, 20, |l| weighted_sum(&l.clone().forward(&x), &w), |l| {
        l.forward(&x);
        l.backward(&w);
    });
    assert!(err < TOL);

    let mut pool = GlobalAvgPool::new();
    let x = input(&[2, 3, 2, 3, 3], 10);
    let w = probe_weights(&[2, 3], 11);
    pool.forward(&x);
    let dx = pool.backward(&w);
    let num = numeric_grad(&x, 1e-5, |xp| weighted_sum(&GlobalAvgPool::new().forward(xp), &w));
    assert!(rel(&dx, &num) < TOL);

    let mut mp = MaxPool3d::new([3, 3, 3], [1, 2, 2], [1, 1, 1]);
    let x = input(&[1, 2, 3, 5, 5], 12);
    let y = mp.forward(&x);
    let w = probe_weights(y.shape(), 13);
    let dx = mp.backward(&w);
    let proto = mp.clone();
    let num = numeric_grad(&x, 1e-6, |xp| weighted_sum(&proto.clone().forward(xp), &w));
    assert!(rel(&dx, &num) < TOL);
}

#[test]
fn recurrent_gradients() {
    let x = input(&[2, 4, 3], 14);
    let w = probe_weights(&[2, 4, 5], 15);

    let mut lstm = Lstm::<f64>::new(3, 5, &mut rng(16));
    lstm.forward(&x);
    let dx = lstm.backward(&w);
    let base = lstm.clone();
    let num = numeric_grad(&x, 1e-5, |xp| weighted_sum(&base.clone().forward(xp), &w));
    assert!(rel(&dx, &num) < TOL);
    let err = check_params(&mut lstm, 25, |l| weighted_sum(&l.clone().forward(&x), &w), |l| {
        l.forward(&x);
        l.backward(&w);
    });
    assert!(err < TOL, "lstm {err}");

    let mut gru = Gru::<f64>::new(3, 5, &mut rng(17));
    gru.forward(&x);
    let dx = gru.backward(&w);
    let base = gru.clone();
    let num = numeric_grad(&x, 1e-5, |xp| weighted_sum(&base.clone().forward(xp), &w));
    assert!(rel(&dx, &num) < TOL);
    let err = check_params(&mut gru, 25, |g| weighted_sum(&g.clone().forward(&x), &w), |g| {
        g.forward(&x);
        g.backward(&w);
    });
    assert!(err < TOL, "gru {err}");

    let w2 = probe_weights(&[2, 4, 10], 18);
    let mut bi = BiGru::<f64>::new(3, 5, &mut rng(19));
    bi.forward(&x);
    let dx = bi.backward(&w2);
    let base = bi.clone();
    let num = numeric_grad(&x, 1e-5, |xp| weighted_sum(&base.clone().forward(xp), &w2));
    assert!(rel(&dx, &num) < TOL);
    let err = check_params(&mut bi, 15, |g| weighted_sum(&g.clone().forward(&x), &w2), |g| {
        g.forward(&x);
        g.backward(&w2);
    });
    assert!(err < TOL, "bigru {err}");
}

#[test]
fn block_gradients() {
    let x = input(&[2, 3, 3, 6, 6], 20);

    let mut unit = ConvUnit::<f64>::same(3, 4, [3, 3, 3], [1, 2, 2], &mut rng(21));
    let y = unit.forward(&x, Mode::Train);
    let w = probe_weights(y.shape(), 22);
    let dx = unit.backward(&w, true).unwrap();
    let base = unit.clone();
    let num = numeric_grad(&x, 1e-5, |xp| weighted_sum(&base.clone().forward(xp, Mode::Train), &w));
    assert!(rel(&dx, &num) < TOL);

    let mut res = ResidualBlock3d::<f64>::new(3, 4, [1, 2, 2], &mut rng(23));
    let y = res.forward(&x, Mode::Train);
    let w = probe_weights(y.shape(), 24);
    let dx = res.backward(&w, true).unwrap();
    let base = res.clone();
    let num = numeric_grad(&x, 1e-5, |xp| weighted_sum(&base.clone().forward(xp, Mode::Train), &w));
    assert!(rel(&dx, &num) < TOL);
    let err = check_params(&mut res, 8, |r| weighted_sum(&r.clone().forward(&x, Mode::Train), &w), |r| {
        r.forward(&x, Mode::Train);
        r.backward(&w, false);
    });
    assert!(err < TOL, "residual {err}");

    let widths = InceptionWidths { b0: 2, b1_reduce: 2, b1: 3, b2_reduce: 1, b2: 2, b3: 2 };
    let mut inc = InceptionBlock3d::<f64>::new(3, widths, &mut rng(25));
    let y = inc.forward(&x, Mode::Train);
    assert_eq!(y.dim(1), widths.total());
    let w = probe_weights(y.shape(), 26);
    let dx = inc.backward(&w, true).unwrap();
    let base = inc.clone();
    let num = numeric_grad(&x, 1e-6, |xp| weighted_sum(&base.clone().forward(xp, Mode::Train), &w));
    assert!(rel(&dx, &num) < TOL);
}

fn tiny(family: Family) -> EncoderSpec {
    let mut s = EncoderSpec::desk(family).with_seed(3);
    s.dropout_p = 0.0;
    s.resolution = 8;
    match family {
        Family::Image2d => {
            s.width_multiplier = 0.125;
            s.n_stages = 3;
        }
        Family::St3dResidual => {
            s.width_multiplier = 0.0625;
            s.n_stages = 2;
            s.stage_temporal_strides = vec![1, 1];
        }
        Family::St3dInception => {
            s.width_multiplier = 0.03125;
        }
        Family::SeqLstm | Family::SeqBigru => {
            s.rnn_hidden = 4;
            if family == Family::SeqLstm {
                s.fc_widths = vec![5, 3];
            }
            let bb = s.backbone.as_mut().unwrap();
            bb.width_multiplier = 0.125;
            bb.n_stages = 3;
            bb.dropout_p = 0.0;
            bb.resolution = 8;
        }
    }
    s
}

#[test]
fn encoder_gradients_for_every_family() {
    for family in Family::ALL {
        let spec = tiny(family);
        let mut enc = Encoder::<f64>::build(&spec).unwrap();
        let x = input(&[2, 3, 3, 8, 8], 30);
        let n_out = enc.forward(&x, Mode::Train).unwrap().logits.len();
        let w: Vec<f64> = probe_weights::<f64>(&[n_out], 31).into_vec();
        let loss = |e: &mut Encoder<f64>| {
            let out = e.forward(&x, Mode::Train).unwrap();
            out.logits.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let err = check_params(&mut enc, 4, loss, |e| {
            e.forward(&x, Mode::Train).unwrap();
            e.backward(&w);
        });
        assert!(err < 1e-3, "{family}: worst relative gradient error {err}");
    }
}
