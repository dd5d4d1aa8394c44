use std::collections::BTreeMap;

use stdeep_core::evalkit::{score_split, score_video, train_family};
use stdeep_core::probes::{
    self, default_battery, embed_2d, extract_features, grad_cam, probe_samples, run_perturbation_battery, Perturbation,
    PerturbationSpec, TsneParams,
};
use stdeep_core::synthcorpus::{generate_corpus, CorpusConfig};
use stdeep_core::trainer::{train, TrainConfig};
use stdeep_core::{CorpusManifest, Label, Split, VideoStore};
use stdeep_nn::{load_checkpoint, save_checkpoint, Encoder, EncoderSpec, Family};

fn corpus(n: [usize; 3], seed: u64) -> (CorpusManifest, VideoStore) {
    generate_corpus(&CorpusConfig { n_real: n, ..CorpusConfig::desk(seed) }).unwrap()
}

fn quick(family: Family, epochs: usize) -> TrainConfig {
    TrainConfig { max_epochs: epochs, seed: 11, ..TrainConfig::for_family(family) }
}

#[test]
fn training_is_reproducible() {
    let (m, store) = corpus([8, 2, 2], 1);
    let spec = EncoderSpec::desk(Family::Image2d).with_seed(3);
    let mut a = train_family::<f32>(&spec, &m, &store, &quick(Family::Image2d, 2)).unwrap();
    let mut b = train_family::<f32>(&spec, &m, &store, &quick(Family::Image2d, 2)).unwrap();
    assert_eq!(a.log, b.log);
    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a.safetensors"), dir.path().join("b.safetensors"));
    save_checkpoint(&pa, &mut a.best, &BTreeMap::new()).unwrap();
    save_checkpoint(&pb, &mut b.best, &BTreeMap::new()).unwrap();
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());

    // A reloaded checkpoint scores exactly like the in-memory model.
    let mut back = load_checkpoint::<f32>(&pa).unwrap().encoder;
    let before = score_split(&mut a.best, &m, &store, Split::Test, 16).unwrap();
    let after = score_split(&mut back, &m, &store, Split::Test, 16).unwrap();
    assert_eq!(before, after);
}

#[test]
fn best_epoch_has_the_lowest_validation_loss() {
    let (m, store) = corpus([8, 2, 2], 2);
    let out = train_family::<f32>(&EncoderSpec::desk(Family::Image2d), &m, &store, &quick(Family::Image2d, 4)).unwrap();
    let min = out.log.iter().map(|l| l.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(out.best_val_loss, min);
    assert_eq!(out.log[out.best_epoch].val_loss, min);
}

#[test]
fn st3d_training_lowers_the_loss() {
    let (m, store) = corpus([16, 4, 4], 5);
    let mut model = Encoder::<f32>::build(&EncoderSpec::desk(Family::St3dResidual)).unwrap();
    let cfg = TrainConfig { early_stop: 20, ..quick(Family::St3dResidual, 20) };
    let out = train(&mut model, &m, &store, &cfg).unwrap();
    let first = out.log[0].train_loss;
    assert!(out.final_train_loss() < first, "loss {first} -> {}", out.final_train_loss());
}

#[test]
fn battery_and_probes_on_a_fresh_model() {
    let (m, store) = corpus([4, 2, 3], 4);
    let test: Vec<_> = m.split(Split::Test).collect();
    let mut st = Encoder::<f64>::build(&EncoderSpec::desk(Family::St3dResidual)).unwrap();
    let samples = probe_samples(&test, &store, 16).unwrap();
    let mut specs = default_battery(9);
    specs.insert(0, PerturbationSpec { kind: Perturbation::FlipNRandom(0), seed: 1 });
    let report = run_perturbation_battery(&mut st, &samples, &specs).unwrap();
    assert_eq!(report.columns[0], "original");
    assert_eq!(report.n_samples["real"], 3);
    assert_eq!(report.n_samples["fake"], 12);
    // Flipping no frame is the unaltered clip.
    assert_eq!(report.columns[1], "original");
    for class in [Label::Real, Label::Fake] {
        let row = &report.per_class_logloss[class.as_str()];
        assert_eq!(row[0], row[1]);
        assert_eq!(report.column(class, "shuffle"), row.last().copied());
    }

    // Image scores ignore frame order.
    let mut img = Encoder::<f64>::build(&EncoderSpec::desk(Family::Image2d)).unwrap();
    for s in &samples {
        let shuffled = probes::perturb(&s.frames, &PerturbationSpec { kind: Perturbation::Shuffle, seed: 5 }).unwrap();
        let a = score_video(&mut img, &s.frames, 16).unwrap();
        let b = score_video(&mut img, &shuffled, 16).unwrap();
        assert!((a - b).abs() <= 1e-9);
    }

    let cam = grad_cam(&mut st, &samples[0].frames).unwrap();
    assert_eq!(cam.heatmaps.len(), 16);
    assert!(cam.heatmaps.iter().flatten().all(|v| (0.0..=1.0).contains(v)));

    let rows = extract_features(&mut st, &test, &store).unwrap();
    let feats: Vec<Vec<f64>> = rows.iter().map(|r| r.features.clone()).collect();
    let params = TsneParams { perplexity: 4.0, iterations: 300, seed: 2, ..TsneParams::default() };
    let e1 = embed_2d(&feats, &params).unwrap();
    let e2 = embed_2d(&feats, &params).unwrap();
    assert_eq!(e1, e2);
    assert_eq!(e1.len(), test.len());
}
