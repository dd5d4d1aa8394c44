use std::collections::BTreeMap;

use image::RgbImage;
use proptest::prelude::*;
use stdeep_core::clipper::{self, AugmentPlan};
use stdeep_core::evalkit::class_precision_table;
use stdeep_core::facepipe::{self, BoundingBox, FaceTrack, OutlierParams};
use stdeep_core::probes::{perturb, Perturbation, PerturbationSpec};
use stdeep_core::trainer::plan_balanced_batches;
use stdeep_core::{CorpusManifest, Label, Split, VideoRecord};
use stdeep_nn::Normalization;

fn cfg() -> ProptestConfig {
    ProptestConfig { cases: 1000, ..ProptestConfig::default() }
}

fn arb_box() -> impl Strategy<Value = BoundingBox> {
    (-50.0..250.0f64, -50.0..250.0f64, 0.5..120.0f64, 0.5..120.0f64).prop_map(|(x, y, w, h)| BoundingBox::new(x, y, w, h, 0).unwrap())
}

/// Boxes drifting along a path with occasional jumps, so some lose contact with their neighbors.
fn arb_track() -> impl Strategy<Value = FaceTrack> {
    prop::collection::vec((arb_box(), prop::bool::weighted(0.25)), 1..24).prop_map(|items| {
        let mut boxes = Vec::new();
        let mut prev: Option<BoundingBox> = None;
        for (i, (b, jump)) in items.into_iter().enumerate() {
            let nb = match prev {
                Some(p) if !jump => BoundingBox { x: p.x + (b.x % 7.0) - 3.0, y: p.y + (b.y % 7.0) - 3.0, w: b.w.max(5.0), h: b.h.max(5.0), frame_index: 0 },
                _ => b,
            };
            boxes.push(BoundingBox { frame_index: i * 10, ..nb });
            prev = Some(nb);
        }
        FaceTrack::new(boxes, 30.0)
    })
}

/// Realistic tracks for the outlier filter: a dominant width cluster with
/// jitter and fewer than a quarter gross spikes.
fn arb_sized_track() -> impl Strategy<Value = FaceTrack> {
    (8usize..40, 20.0..80.0f64).prop_flat_map(|(n, base)| {
        let spikes = (n - 1) / 4;
        (
            prop::collection::vec(0.8..1.2f64, n),
            prop::collection::vec(15.0..40.0f64, spikes),
            prop::collection::vec(0..n, spikes),
        )
            .prop_map(move |(jit, mult, at)| {
                let mut widths: Vec<f64> = jit.iter().map(|j| base * j).collect();
                for (m, &i) in mult.iter().zip(&at) {
                    widths[i] = base * m;
                }
                let boxes = widths.iter().enumerate().map(|(i, &w)| BoundingBox::new(10.0, 10.0, w, w, i * 10).unwrap()).collect();
                FaceTrack::new(boxes, 30.0)
            })
    })
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let (x, y) = (facepipe::iou(&a, &b), facepipe::iou(&b, &a));
        prop_assert!((x - y).abs() <= 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&x));
        prop_assert!((facepipe::iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn overlap_filter_is_idempotent(t in arb_track()) {
        if let Ok(once) = facepipe::filter_by_overlap(&t) {
            let twice = facepipe::filter_by_overlap(&once).unwrap();
            prop_assert_eq!(&once, &twice);
            // Every survivor overlaps a neighbor that also survived.
            if once.boxes.len() > 1 {
                for (i, b) in once.boxes.iter().enumerate() {
                    let touches = |j: usize| facepipe::iou(b, &once.boxes[j]) > 0.0;
                    prop_assert!((i > 0 && touches(i - 1)) || (i + 1 < once.boxes.len() && touches(i + 1)));
                }
            }
        }
    }

    #[test]
    fn outlier_filter_is_idempotent_and_keeps_the_median_box(t in arb_sized_track(), thr in 1.0..12.0f64) {
        let p = OutlierParams { threshold: thr };
        let once = facepipe::filter_size_outliers(&t, p).unwrap();
        let twice = facepipe::filter_size_outliers(&once, p).unwrap();
        prop_assert_eq!(&once, &twice);
        let widths: Vec<f64> = t.boxes.iter().map(|b| b.w).collect();
        let med = facepipe::median(&widths).unwrap();
        let closest = t.boxes.iter().min_by(|a, b| (a.w - med).abs().total_cmp(&(b.w - med).abs())).unwrap();
        prop_assert!(once.boxes.contains(closest));
    }

    #[test]
    fn squarify_and_margin_stay_square_and_inside(b in arb_box(), m in 0.0..1.0f64) {
        let s = facepipe::squarify(&b);
        prop_assert!(s.is_square());
        prop_assert!((s.center().0 - b.center().0).abs() < 1e-9 && (s.center().1 - b.center().1).abs() < 1e-9);
        let (iw, ih) = (200.0, 160.0);
        let cx = s.center();
        if cx.0 > 0.0 && cx.0 < iw && cx.1 > 0.0 && cx.1 < ih {
            let e = facepipe::expand_with_margin(&b, m, iw, ih);
            prop_assert!(e.is_square());
            prop_assert!(e.x >= -1e-9 && e.y >= -1e-9 && e.x + e.w <= iw + 1e-9 && e.y + e.h <= ih + 1e-9);
            prop_assert!(e.w <= s.w * (1.0 + m) + 1e-9);
        }
    }

    #[test]
    fn windows_cover_every_frame(n in 1usize..200, len in 1usize..32, stride_frac in 0.0..1.0f64) {
        let stride = 1 + ((len - 1) as f64 * stride_frac) as usize;
        let plan = clipper::plan_inference_windows(n, len, stride).unwrap();
        let mut seen = vec![false; n];
        for w in plan.windows() {
            prop_assert_eq!(w.len(), len);
            for (k, &i) in w.iter().enumerate() {
                seen[i] = true;
                prop_assert_eq!(i, (w[0] + k) % n);
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
        prop_assert!(plan.starts.windows(2).all(|s| s[1] - s[0] == stride));
    }

    #[test]
    fn training_windows_are_consecutive_modulo_looping(n in 1usize..100, len in 1usize..32, seed: u64) {
        let w = clipper::sample_training_window(n, len, seed).unwrap();
        prop_assert_eq!(w.len(), len);
        for k in 1..len {
            prop_assert_eq!(w[k], (w[k - 1] + 1) % n);
        }
        if n >= len {
            prop_assert!(w[0] + len <= n);
        }
    }

    #[test]
    fn normalization_round_trips(px in prop::collection::vec(any::<u8>(), 48), half: bool) {
        let img = RgbImage::from_raw(4, 4, px).unwrap();
        let norm = if half { Normalization::HalfHalf } else { Normalization::ImagenetStats };
        prop_assert_eq!(clipper::denormalize(&clipper::normalize(&img, norm), 4, 4, norm), img);
    }

    #[test]
    fn augmentation_hits_every_frame_identically(seed: u64, px in prop::collection::vec(any::<u8>(), 192)) {
        let f = RgbImage::from_raw(8, 8, px).unwrap();
        let out = AugmentPlan::draw(seed, 8, 8).apply(&[f.clone(), f.clone(), f]);
        prop_assert!(out[0] == out[1] && out[1] == out[2]);
    }

    #[test]
    fn shuffle_inverts_and_flips_commute_with_normalization(seed: u64, n in 0usize..=8) {
        let frames: Vec<RgbImage> = (0..8u8).map(|t| RgbImage::from_fn(5, 3, |x, y| image::Rgb([x as u8 * 50, y as u8 * 80, t * 30]))).collect();
        let s = PerturbationSpec { kind: Perturbation::Shuffle, seed };
        let (order, _) = s.plan(8).unwrap();
        let out = perturb(&frames, &s).unwrap();
        let mut back = frames.clone();
        for (k, &i) in order.iter().enumerate() {
            back[i] = out[k].clone();
        }
        prop_assert_eq!(back, frames.clone());

        let flip = PerturbationSpec { kind: Perturbation::FlipNRandom(n), seed };
        let (_, flags) = flip.plan(8).unwrap();
        let flipped = perturb(&frames, &flip).unwrap();
        for (t, f) in flipped.iter().enumerate() {
            let a = clipper::normalize(f, Normalization::ImagenetStats);
            let mut b = clipper::normalize(&frames[t], Normalization::ImagenetStats);
            if flags[t] {
                for plane in b.chunks_mut(15) {
                    for row in plane.chunks_mut(5) {
                        row.reverse();
                    }
                }
            }
            prop_assert_eq!(a, b);
        }
    }
}

fn record(id: &str, split: Split, label: Label, method: &str, source: Option<&str>) -> VideoRecord {
    VideoRecord {
        id: id.into(),
        split,
        label,
        method: method.into(),
        frame_dir: id.into(),
        n_frames: 16,
        source: source.map(String::from),
        tags: vec![],
    }
}

fn arb_manifest() -> impl Strategy<Value = CorpusManifest> {
    (1usize..30, prop::collection::vec(0.0..1.0f64, 1..5)).prop_map(|(reals, keep)| {
        let mut recs = Vec::new();
        for i in 0..reals {
            let id = format!("r{i}");
            for (k, p) in keep.iter().enumerate() {
                // Methods are present on a varying share of the reals.
                if i == 0 || (i as f64 / reals as f64) < *p {
                    recs.push(record(&format!("{id}_m{k}"), Split::Train, Label::Fake, &format!("m{k}"), Some(&id)));
                }
            }
            recs.push(record(&id, Split::Train, Label::Real, "real", None));
        }
        CorpusManifest::new(recs, None).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 300, ..ProptestConfig::default() })]

    #[test]
    fn every_batch_is_balanced(m in arb_manifest(), half in 1usize..6, seed: u64) {
        let plan = plan_balanced_batches(&m, 2 * half, seed).unwrap();
        let reals = m.split(Split::Train).filter(|r| r.label == Label::Real).count();
        prop_assert_eq!(plan.len(), reals.div_ceil(half));
        let mut slots: BTreeMap<&str, usize> = BTreeMap::new();
        for b in &plan {
            let r = b.entries.iter().filter(|e| e.label == Label::Real).count();
            let f = b.entries.iter().filter(|e| e.label == Label::Fake).count();
            prop_assert_eq!(r, f);
            prop_assert_eq!((r, f), (b.real_count, b.fake_count));
            for e in b.entries.iter().filter(|e| e.label == Label::Fake) {
                *slots.entry(e.method.as_str()).or_default() += 1;
            }
        }
        // Every method shows up as often as every other, up to one cycle.
        let counts: Vec<usize> = m.methods().iter().map(|k| slots.get(k.as_str()).copied().unwrap_or(0)).collect();
        prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }

    #[test]
    fn raising_the_threshold_is_monotone(scores in prop::collection::vec(0.0..1.0f64, 12), lo in 0.0..1.0f64, d in 0.0..0.5f64) {
        let mut recs = Vec::new();
        for i in 0..4 {
            recs.push(record(&format!("r{i}"), Split::Test, Label::Real, "real", None));
            recs.push(record(&format!("a{i}"), Split::Test, Label::Fake, "M1", None));
            recs.push(record(&format!("b{i}"), Split::Test, Label::Fake, "M2", None));
        }
        let m = CorpusManifest::new(recs, None).unwrap();
        let map: BTreeMap<String, f64> = m.records.iter().zip(&scores).map(|(r, &s)| (r.id.clone(), s)).collect();
        let a = class_precision_table(&map, &m, lo).unwrap();
        let b = class_precision_table(&map, &m, lo + d).unwrap();
        prop_assert!(b.real_acc >= a.real_acc);
        for (k, v) in &a.per_method {
            prop_assert!(b.per_method[k] <= *v);
        }
        prop_assert!((a.overall_avg - (a.real_acc + a.fake_acc) / 2.0).abs() < 1e-12);
    }
}

#[test]
fn outlier_worked_examples() {
    let t = |ws: &[f64]| FaceTrack::new(ws.iter().enumerate().map(|(i, &w)| BoundingBox::new(0.0, 0.0, w, w, i).unwrap()).collect(), 30.0);
    // Median 10: a width of 120 scores 11 and goes, 100 scores 9 and stays.
    let out = facepipe::filter_size_outliers(&t(&[10.0, 10.0, 10.0, 120.0, 10.0]), OutlierParams::default()).unwrap();
    assert_eq!(out.boxes.len(), 4);
    let out = facepipe::filter_size_outliers(&t(&[10.0, 10.0, 10.0, 100.0, 10.0]), OutlierParams::default()).unwrap();
    assert_eq!(out.boxes.len(), 5);
}
