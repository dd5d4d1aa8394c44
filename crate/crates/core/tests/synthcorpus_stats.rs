use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use stdeep_core::synthcorpus::{
    apply_method, build_corpus, generate_corpus, generate_real, CorpusConfig, MethodName, SynthMethod, SynthVideo,
};
use stdeep_core::{Label, Split};

const SIZE: usize = 16;
const FRAMES: usize = 16;

/// Per-frame brightness offset recovered from the 8-bit frames: rendered mean minus base mean.
fn recovered_offsets(v: &SynthVideo) -> Vec<f64> {
    v.render()
        .iter()
        .zip(&v.base)
        .map(|(img, base)| {
            let r = img.as_raw().iter().map(|&p| p as f64 / 255.0).sum::<f64>() / img.as_raw().len() as f64;
            let b = base.data.iter().map(|&p| p as f64).sum::<f64>() / base.data.len() as f64;
            r - b
        })
        .collect()
}

/// Pooled lag-1 autocorrelation over many short series.
fn lag1(series: &[Vec<f64>]) -> f64 {
    let all: Vec<f64> = series.iter().flatten().copied().collect();
    let mu = all.iter().sum::<f64>() / all.len() as f64;
    let var: f64 = all.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / all.len() as f64;
    let (mut cov, mut n) = (0.0, 0usize);
    for s in series {
        for w in s.windows(2) {
            cov += (w[0] - mu) * (w[1] - mu);
            n += 1;
        }
    }
    cov / n as f64 / var
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    let ne = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
    let lam = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-1.0f64).powi(k - 1) * (-2.0 * (k as f64 * lam).powi(2)).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}

#[test]
fn ks_oracle_sanity() {
    let a: Vec<f64> = (0..500).map(|i| i as f64 / 500.0).collect();
    let b: Vec<f64> = (0..500).map(|i| (i as f64 + 0.5) / 500.0).collect();
    assert!(ks_two_sample(&a, &b).1 > 0.9);
    let c: Vec<f64> = a.iter().map(|x| x + 0.3).collect();
    let (d, p) = ks_two_sample(&a, &c);
    assert!((d - 0.3).abs() < 0.01 && p < 1e-10);
}

#[test]
fn brightness_lag1_autocorrelation_is_rho() {
    // 640 videos x 16 frames, about 10k frames.
    let series: Vec<Vec<f64>> = (0..640).map(|s| recovered_offsets(&generate_real(s, FRAMES, SIZE).unwrap())).collect();
    let r = lag1(&series);
    assert!((r - 0.9).abs() <= 0.03, "lag-1 autocorrelation {r}");
}

#[test]
fn flicker_matches_marginals_and_breaks_correlation() {
    let m2 = SynthMethod::new(MethodName::M2);
    let t = 5;
    let mut real_stat = Vec::new();
    let mut fake_stat = Vec::new();
    let mut fake_series = Vec::new();
    for s in 0..1000u64 {
        let r = generate_real(s, FRAMES, SIZE).unwrap();
        real_stat.push(recovered_offsets(&r)[t]);
        // Independent source videos for the fake sample.
        let f = apply_method(&generate_real(100_000 + s, FRAMES, SIZE).unwrap(), &m2, s).unwrap();
        let off = recovered_offsets(&f);
        fake_stat.push(off[t]);
        fake_series.push(off);
    }
    let (d, p) = ks_two_sample(&real_stat, &fake_stat);
    assert!(p > 0.01, "KS D={d} p={p}");
    let r = lag1(&fake_series);
    assert!(r.abs() <= 0.03, "flicker lag-1 autocorrelation {r}");
}

fn small_config(seed: u64) -> CorpusConfig {
    CorpusConfig { n_real: [6, 2, 2], ..CorpusConfig::desk(seed) }
}

fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn same_seed_gives_byte_identical_corpus() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    build_corpus(&small_config(7), a.path()).unwrap();
    build_corpus(&small_config(7), b.path()).unwrap();
    build_corpus(&small_config(8), c.path()).unwrap();
    let (fa, fb, fc) = (files(a.path()), files(b.path()), files(c.path()));
    assert!(fa.len() > 100);
    assert_eq!(fa, fb);
    assert_ne!(fa, fc);
}

#[test]
fn splits_share_no_source_video() {
    let (m, store) = generate_corpus(&small_config(3)).unwrap();
    let mut owner: BTreeMap<String, Split> = BTreeMap::new();
    for r in &m.records {
        let src = r.source.clone().unwrap_or_else(|| r.id.clone());
        let prev = owner.insert(src, r.split);
        assert!(prev.is_none() || prev == Some(r.split), "{} crosses splits", r.id);
        assert_eq!(store.get(&r.id).unwrap().len(), r.n_frames);
    }
    for split in Split::ALL {
        let reals = m.split(split).filter(|r| r.label == Label::Real).count();
        let fakes = m.split(split).filter(|r| r.label == Label::Fake).count();
        assert_eq!(fakes, 4 * reals);
    }
    let methods: BTreeSet<String> = m.methods().into_iter().collect();
    assert_eq!(methods.len(), 4);
}
