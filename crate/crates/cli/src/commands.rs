use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use serde_json::Value;
use stdeep_core::evalkit::{
    class_precision_table, cross_dataset_eval, parse_groups, run_leave_out_campaign, score_split, singleton_groups,
    train_family, validate_groups, EvalError, DEFAULT_THRESHOLD,
};
use stdeep_core::probes::{
    self, cam_strip, default_battery, embed_2d, extract_features, grad_cam, probe_clip_len, probe_samples, run_perturbation_battery,
    scatter_plot, TsneParams,
};
use stdeep_core::seeds::derive_seed;
use stdeep_core::synthcorpus::{build_corpus, CorpusConfig, MethodName, SynthMethod};
use stdeep_core::trainer::{Scheduler, TrainConfig};
use stdeep_core::{CorpusManifest, Split, VideoRecord, VideoStore};
use stdeep_nn::{load_checkpoint, save_checkpoint, Encoder, EncoderSpec, Family};

use crate::config::{Resolver, RunConfig, UsageError};
use crate::{Common, ProbeInput, SynthArgs, TrainArgs};

pub const CHECKPOINT_FILE: &str = "model.safetensors";
const DEFAULT_STRIDE: usize = 16;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// JSON artifact: the payload plus the run that produced it.
#[derive(Serialize)]
struct Artifact<'a, T: Serialize> {
    run_config: &'a RunConfig,
    result: T,
}

fn write_json<T: Serialize>(path: &Path, run: &RunConfig, result: T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(&Artifact { run_config: run, result })?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn prepare(common: &Common) -> anyhow::Result<(Resolver, u64)> {
    let mut r = Resolver::new(common.config.as_deref())?;
    let seed = r.seed(common.seed)?;
    Ok((r, seed))
}

/// Closes config resolution and creates the output directory.
fn begin(r: Resolver, command: &str, seed: u64, out: &Path) -> anyhow::Result<RunConfig> {
    let run = r.finish(command, seed, out)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    Ok(run)
}

fn comma_list(s: &str) -> Vec<String> {
    s.split(',').map(|m| m.trim().to_string()).filter(|m| !m.is_empty()).collect()
}

fn load_corpus(path: &Path) -> anyhow::Result<(CorpusManifest, VideoStore)> {
    let manifest = CorpusManifest::read_jsonl(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let root = path.parent().unwrap_or(Path::new("."));
    let store = VideoStore::load(&manifest, root).with_context(|| format!("loading frames under {}", root.display()))?;
    Ok((manifest, store))
}

fn resolve_path(r: &mut Resolver, key: &str, flag: Option<PathBuf>) -> anyhow::Result<PathBuf> {
    let s: String = r.required(key, flag.map(|p| p.display().to_string()))?;
    Ok(PathBuf::from(s))
}

fn resolve_split(r: &mut Resolver, flag: Option<String>) -> anyhow::Result<Split> {
    let s = r.get("split", flag, "test".to_string())?;
    Resolver::parse("split", &s)
}

fn resolve_training(r: &mut Resolver, a: &TrainArgs, seed: u64) -> anyhow::Result<(EncoderSpec, TrainConfig)> {
    let fam_s = r.get("family", a.family.clone(), "st3d".to_string())?;
    let family: Family = Resolver::parse("family", &fam_s)?;
    let preset = r.get("preset", a.preset.clone(), "desk".to_string())?;
    let d = match preset.as_str() {
        "desk" => TrainConfig::for_family(family),
        "full" => TrainConfig::full_scale(family),
        other => return Err(usage(format!("unknown preset `{other}`, expected desk or full"))),
    };
    let sched = r.get("scheduler", a.scheduler.clone(), "plateau".to_string())?;
    let scheduler = match sched.as_str() {
        "plateau" => Scheduler::plateau(),
        "multiplicative" => Scheduler::multiplicative(),
        other => return Err(usage(format!("unknown scheduler `{other}`, expected plateau or multiplicative"))),
    };
    let workers: usize = r.get("workers", a.workers, 1)?;
    if workers != 1 {
        return Err(usage(format!("workers = {workers}: training runs on a single data worker")));
    }
    let cfg = TrainConfig {
        lr: r.get("lr", a.lr, d.lr)?,
        weight_decay: r.get("weight_decay", a.weight_decay, d.weight_decay)?,
        batch_size: r.get("batch_size", a.batch_size, d.batch_size)?,
        scheduler,
        max_epochs: r.get("epochs", a.epochs, d.max_epochs)?,
        early_stop: r.get("early_stop", a.early_stop, d.early_stop)?,
        augment: r.get("augment", a.augment, d.augment)?,
        val_stride: r.get("val_stride", a.val_stride, d.val_stride)?,
        seed: derive_seed(seed, &["train"]),
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let spec = EncoderSpec::desk(family).with_seed(derive_seed(seed, &["init"]));
    Ok((spec, cfg))
}

pub fn synth(common: &Common, a: &SynthArgs) -> anyhow::Result<()> {
    let (mut r, seed) = prepare(common)?;
    let d = CorpusConfig::desk(seed);
    let methods_s = r.get("methods", a.methods.clone(), "M1,M2,M3,M4".to_string())?;
    let methods = comma_list(&methods_s)
        .iter()
        .map(|m| m.parse::<MethodName>().map(SynthMethod::new).map_err(|e| usage(e.to_string())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let cfg = CorpusConfig {
        n_real: [
            r.get("n_train", a.n_train, d.n_real[0])?,
            r.get("n_val", a.n_val, d.n_real[1])?,
            r.get("n_test", a.n_test, d.n_real[2])?,
        ],
        methods,
        size: r.get("size", a.size, d.size)?,
        min_frames: r.get("min_frames", a.min_frames, d.min_frames)?,
        max_frames: r.get("max_frames", a.max_frames, d.max_frames)?,
        motion_heavy_fraction: r.get("motion_heavy_fraction", a.motion_heavy_fraction, d.motion_heavy_fraction)?,
        seed,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let run = begin(r, "synth", seed, &common.out)?;
    let manifest = build_corpus(&cfg, &common.out)?;
    let counts: BTreeMap<String, usize> = manifest.records.iter().fold(BTreeMap::new(), |mut m, rec| {
        *m.entry(format!("{}/{}", rec.split.as_str(), rec.method)).or_default() += 1;
        m
    });
    write_json(&common.out.join("run.json"), &run, serde_json::json!({ "manifest_id": manifest.id(), "counts": counts }))?;
    println!("wrote {} videos to {}", manifest.records.len(), common.out.display());
    Ok(())
}

pub fn train(common: &Common, manifest: Option<PathBuf>, exclude: Option<String>, a: &TrainArgs) -> anyhow::Result<()> {
    let (mut r, seed) = prepare(common)?;
    let mpath = resolve_path(&mut r, "manifest", manifest)?;
    let exclude_s = r.get("exclude_methods", exclude, String::new())?;
    let (spec, cfg) = resolve_training(&mut r, a, seed)?;
    let run = begin(r, "train", seed, &common.out)?;

    let (full, store) = load_corpus(&mpath)?;
    let excluded = comma_list(&exclude_s);
    let known = full.methods();
    if let Some(m) = excluded.iter().find(|m| !known.contains(m)) {
        return Err(usage(format!("cannot exclude unknown method `{m}`; corpus has {known:?}")));
    }
    let m = full.exclude_methods(&excluded);
    let mut out = train_family::<f32>(&spec, &m, &store, &cfg)?;

    let run_json = serde_json::to_string(&run)?;
    let meta: BTreeMap<String, String> = [
        ("run_config".to_string(), run_json),
        ("version".to_string(), run.version.clone()),
        ("manifest_id".to_string(), full.id()),
        ("best_epoch".to_string(), out.best_epoch.to_string()),
    ]
    .into();
    save_checkpoint(&common.out.join(CHECKPOINT_FILE), &mut out.best, &meta)?;
    out.write_log(&common.out.join("log.jsonl"))?;
    write_json(
        &common.out.join("train.json"),
        &run,
        serde_json::json!({
            "manifest_id": full.id(),
            "best_epoch": out.best_epoch,
            "best_val_loss": out.best_val_loss,
            "final_train_loss": out.final_train_loss(),
            "log": out.log,
        }),
    )?;
    println!(
        "best epoch {} val loss {:.4}, final train loss {:.6}",
        out.best_epoch,
        out.best_val_loss,
        out.final_train_loss()
    );
    Ok(())
}

fn load_model(path: &Path) -> anyhow::Result<(Encoder<f32>, BTreeMap<String, String>)> {
    let ck = load_checkpoint::<f32>(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok((ck.encoder, ck.metadata))
}

pub fn eval(
    common: &Common,
    checkpoint: Option<PathBuf>,
    manifest: Option<PathBuf>,
    split: Option<String>,
    stride: Option<usize>,
    threshold: Option<f64>,
    cross: bool,
) -> anyhow::Result<()> {
    let (mut r, seed) = prepare(common)?;
    let ck = resolve_path(&mut r, "checkpoint", checkpoint)?;
    let mpath = resolve_path(&mut r, "manifest", manifest)?;
    let split = resolve_split(&mut r, split)?;
    let stride = r.get("stride", stride, DEFAULT_STRIDE)?;
    let threshold = r.get("threshold", threshold, DEFAULT_THRESHOLD)?;
    let cross = r.get("cross", cross.then_some(true), false)?;
    if cross && split != Split::Test {
        return Err(usage("cross-dataset evaluation scores the test split"));
    }
    let run = begin(r, "eval", seed, &common.out)?;

    let (m, store) = load_corpus(&mpath)?;
    let (mut model, meta) = load_model(&ck)?;
    let source = meta.get("manifest_id").cloned().unwrap_or_default();
    if cross && source == m.id() {
        return Err(usage(format!("manifest {source} is the training manifest")));
    }
    let scores = score_split(&mut model, &m, &store, split, stride)?;
    let mut w = csv::Writer::from_path(common.out.join("scores.csv"))?;
    w.write_record(["video_id", "label", "method", "score"])?;
    for rec in m.split(split) {
        w.write_record([rec.id.as_str(), rec.label.as_str(), &rec.method, &format!("{:.8}", scores[&rec.id])])?;
    }
    w.flush()?;

    // The precision table is defined on the test split only.
    let result = if split != Split::Test {
        serde_json::json!({ "split": split.as_str(), "n_scored": scores.len() })
    } else if cross {
        let rep = match cross_dataset_eval(&mut model, &source, &m, &store, stride) {
            Err(EvalError::Leakage(id)) => return Err(usage(format!("manifest {id} is the training manifest"))),
            other => other?,
        };
        serde_json::json!({ "split": "test", "cross_dataset": rep, "rounded": rep.table.rounded() })
    } else {
        let table = class_precision_table(&scores, &m, threshold)?;
        serde_json::json!({ "split": "test", "table": table, "rounded": table.rounded() })
    };
    write_json(&common.out.join("eval.json"), &run, &result)?;
    println!("{}", serde_json::to_string(&result)?);
    Ok(())
}

pub fn campaign(common: &Common, manifest: Option<PathBuf>, groups: Option<String>, a: &TrainArgs) -> anyhow::Result<()> {
    let (mut r, seed) = prepare(common)?;
    let mpath = resolve_path(&mut r, "manifest", manifest)?;
    let groups_s = r.get("groups", groups, "singletons".to_string())?;
    let parsed = match groups_s.trim() {
        "singletons" => None,
        s => Some(parse_groups(s).map_err(|e| usage(e.to_string()))?),
    };
    let (spec, cfg) = resolve_training(&mut r, a, seed)?;

    let (m, store) = load_corpus(&mpath)?;
    let methods = m.methods();
    let groups = parsed.unwrap_or_else(|| singleton_groups(&methods));
    validate_groups(&groups, &methods).map_err(|e| usage(e.to_string()))?;
    let run = begin(r, "campaign", seed, &common.out)?;
    let c = run_leave_out_campaign::<f32>(&spec, &m, &store, &groups, &cfg)?;
    std::fs::write(common.out.join("campaign.csv"), c.to_csv()?)?;
    write_json(&common.out.join("campaign.json"), &run, &c)?;
    println!("{} runs, average drop {:.2}", c.n_runs(), c.avg_drop);
    Ok(())
}

struct ProbeSetup {
    run: RunConfig,
    seed: u64,
    model: Encoder<f32>,
    manifest: CorpusManifest,
    store: VideoStore,
    split: Split,
}

impl ProbeSetup {
    fn records(&self) -> Vec<&VideoRecord> {
        self.manifest.split(self.split).collect()
    }
}

fn probe_setup(
    common: &Common,
    input: &ProbeInput,
    command: &str,
    extra: impl FnOnce(&mut Resolver) -> anyhow::Result<()>,
) -> anyhow::Result<ProbeSetup> {
    let (mut r, seed) = prepare(common)?;
    let ck = resolve_path(&mut r, "checkpoint", input.checkpoint.clone())?;
    let mpath = resolve_path(&mut r, "manifest", input.manifest.clone())?;
    let split = resolve_split(&mut r, input.split.clone())?;
    let set: Option<String> = r.opt("set", input.set.clone())?;
    extra(&mut r)?;
    let run = begin(r, command, seed, &common.out)?;
    let (full, store) = load_corpus(&mpath)?;
    let manifest = match &set {
        Some(tag) => full.with_tag(tag),
        None => full,
    };
    if manifest.split(split).next().is_none() {
        return Err(usage(format!("no {} videos selected{}", split.as_str(), set.map(|t| format!(" with tag {t}")).unwrap_or_default())));
    }
    let (model, _) = load_model(&ck)?;
    Ok(ProbeSetup { run, seed, model, manifest, store, split })
}

pub fn probe_battery(common: &Common, input: &ProbeInput) -> anyhow::Result<()> {
    let mut s = probe_setup(common, input, "probe battery", |_| Ok(()))?;
    let samples = probe_samples(&s.records(), &s.store, probe_clip_len(s.model.spec()))?;
    let report = run_perturbation_battery(&mut s.model, &samples, &default_battery(derive_seed(s.seed, &["battery"])))?;
    write_json(&common.out.join("battery.json"), &s.run, &report)?;
    for (class, row) in &report.per_class_logloss {
        let cells: Vec<String> = report.columns.iter().zip(row).map(|(c, v)| format!("{c}={v:.4}")).collect();
        println!("{class}: {}", cells.join(" "));
    }
    Ok(())
}

pub fn probe_embed(common: &Common, input: &ProbeInput, perplexity: Option<f64>, iters: Option<usize>) -> anyhow::Result<()> {
    let d = TsneParams::default();
    let mut params = d;
    let mut s = probe_setup(common, input, "probe embed", |r| {
        params.perplexity = r.get("perplexity", perplexity, d.perplexity)?;
        params.iterations = r.get("iters", iters, d.iterations)?;
        Ok(())
    })?;
    params.seed = derive_seed(s.seed, &["embed"]);
    let records: Vec<VideoRecord> = s.records().into_iter().cloned().collect();
    let refs: Vec<&VideoRecord> = records.iter().collect();
    let rows = extract_features(&mut s.model, &refs, &s.store)?;
    let feats: Vec<Vec<f64>> = rows.iter().map(|r| r.features.clone()).collect();
    let points = match embed_2d(&feats, &params) {
        Err(e @ probes::ProbeError::TooFewRows { .. }) => return Err(usage(format!("{e}; lower --perplexity"))),
        other => other?,
    };

    let mut w = csv::Writer::from_path(common.out.join("embedding.csv"))?;
    w.write_record(["video_id", "label", "method", "x", "y"])?;
    for (row, p) in rows.iter().zip(&points) {
        w.write_record([row.id.as_str(), row.label.as_str(), &row.method, &format!("{:.8}", p[0]), &format!("{:.8}", p[1])])?;
    }
    w.flush()?;
    let groups: Vec<String> = rows.iter().map(|r| r.method.clone()).collect();
    scatter_plot(&points, &groups, 512).save(common.out.join("embedding.png"))?;
    let pts: Vec<Value> =
        rows.iter().zip(&points).map(|(r, p)| serde_json::json!({ "video_id": r.id, "method": r.method, "x": p[0], "y": p[1] })).collect();
    write_json(&common.out.join("embed.json"), &s.run, serde_json::json!({ "tsne": params, "points": pts }))?;
    println!("embedded {} videos", points.len());
    Ok(())
}

pub fn probe_cam(common: &Common, input: &ProbeInput, video: Option<String>) -> anyhow::Result<()> {
    let mut id = String::new();
    let mut s = probe_setup(common, input, "probe cam", |r| {
        id = r.required("video", video)?;
        Ok(())
    })?;
    let rec = s.manifest.get(&id).ok_or_else(|| usage(format!("video `{id}` is not in the manifest")))?.clone();
    let sample = probe_samples(&[&rec], &s.store, probe_clip_len(s.model.spec()))?.remove(0);
    let map = grad_cam(&mut s.model, &sample.frames)?;
    let file = format!("cam_{id}.png");
    cam_strip(&sample.frames, &map).save(common.out.join(&file))?;
    let means: Vec<f64> = (0..map.heatmaps.len()).map(|t| map.frame_mean(t)).collect();
    write_json(
        &common.out.join(format!("cam_{id}.json")),
        &s.run,
        serde_json::json!({ "video_id": id, "image": file, "prediction": map.prediction, "raw_max": map.raw_max, "frame_means": means }),
    )?;
    println!("wrote {file}");
    Ok(())
}

fn fmt_row(cells: &[String]) -> String {
    format!("| {} |", cells.join(" | "))
}

fn table_lines(title: &str, t: &Value) -> Vec<String> {
    let mut head = vec!["run".to_string()];
    let mut cells = vec![title.to_string()];
    if let Some(pm) = t["per_method"].as_object() {
        for (k, v) in pm {
            head.push(k.clone());
            cells.push(format!("{:.2}", v.as_f64().unwrap_or(f64::NAN)));
        }
    }
    for k in ["real_acc", "fake_acc", "overall_avg"] {
        head.push(k.into());
        cells.push(format!("{:.2}", t[k].as_f64().unwrap_or(f64::NAN)));
    }
    let sep: Vec<String> = head.iter().map(|_| "---".to_string()).collect();
    vec![fmt_row(&head), fmt_row(&sep), fmt_row(&cells)]
}

fn summarize(name: &str, v: &Value) -> Vec<String> {
    let cmd = v["run_config"]["command"].as_str().unwrap_or("?");
    let res = &v["result"];
    let mut out = vec![format!("## {name} ({cmd})"), String::new()];
    match cmd {
        "train" => out.push(format!(
            "best epoch {}, best val loss {:.4}, final train loss {:.6}",
            res["best_epoch"], res["best_val_loss"].as_f64().unwrap_or(f64::NAN), res["final_train_loss"].as_f64().unwrap_or(f64::NAN)
        )),
        "eval" => {
            let t = if res["table"].is_object() { &res["table"] } else { &res["cross_dataset"]["table"] };
            if t.is_object() {
                out.extend(table_lines("test", t));
            }
        }
        "campaign" => {
            out.extend(table_lines("all", &res["baseline"]["table"]));
            for (run, d) in res["runs"].as_array().into_iter().flatten().zip(res["drop_per_run"].as_array().into_iter().flatten()) {
                let label = run["left_out"].as_array().map(|l| l.iter().filter_map(Value::as_str).collect::<Vec<_>>().join("+")).unwrap_or_default();
                let mut line = table_lines(&format!("-{label}"), &run["table"]).pop().unwrap_or_default();
                line.push_str(&format!(" drop {:.2}", d.as_f64().unwrap_or(f64::NAN)));
                out.push(line);
            }
            out.push(String::new());
            out.push(format!("average drop {:.2}", res["avg_drop"].as_f64().unwrap_or(f64::NAN)));
        }
        "probe battery" => {
            let cols: Vec<String> = res["columns"].as_array().into_iter().flatten().filter_map(|c| c.as_str().map(String::from)).collect();
            let mut head = vec!["class".to_string()];
            head.extend(cols);
            out.push(fmt_row(&head));
            out.push(fmt_row(&head.iter().map(|_| "---".to_string()).collect::<Vec<_>>()));
            for (class, row) in res["per_class_logloss"].as_object().into_iter().flatten() {
                let mut cells = vec![class.clone()];
                cells.extend(row.as_array().into_iter().flatten().map(|v| format!("{:.4}", v.as_f64().unwrap_or(f64::NAN))));
                out.push(fmt_row(&cells));
            }
        }
        "probe embed" => out.push(format!("{} points", res["points"].as_array().map_or(0, Vec::len))),
        "synth" => out.push(format!("manifest {}", res["manifest_id"].as_str().unwrap_or("?"))),
        _ => out.push(format!("video {}", res["video_id"])),
    }
    out.push(String::new());
    out
}

pub fn report(common: &Common, inputs: &[PathBuf]) -> anyhow::Result<()> {
    let (r, seed) = prepare(common)?;
    let run = begin(r, "report", seed, &common.out)?;
    let mut lines = vec!["# Run report".to_string(), String::new()];
    let mut sources = Vec::new();
    for dir in inputs {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        entries.sort();
        for p in entries {
            let Ok(v) = serde_json::from_str::<Value>(&std::fs::read_to_string(&p)?) else { continue };
            if !v["run_config"].is_object() {
                continue;
            }
            let name = p.display().to_string();
            lines.extend(summarize(&name, &v));
            sources.push(serde_json::json!({ "path": name, "run_config": v["run_config"] }));
        }
    }
    if sources.is_empty() {
        return Err(usage("no run artifacts found in the given inputs"));
    }
    lines.push(format!("_stdeep {} (seed {seed})_", run.version));
    std::fs::write(common.out.join("report.md"), lines.join("\n") + "\n")?;
    write_json(&common.out.join("report.json"), &run, serde_json::json!({ "sources": sources }))?;
    println!("summarized {} artifacts", sources.len());
    Ok(())
}
