use std::path::Path;
use std::process::{Command, Output};

fn stdeep(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_stdeep"));
    c.args(args).env_remove("STDEEP_SEED");
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn tiny_corpus(dir: &Path) -> String {
    let out = dir.join("corpus").display().to_string();
    let o = stdeep(&["synth", "--out", &out, "--n-train", "4", "--n-val", "2", "--n-test", "2"], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    format!("{out}/manifest.jsonl")
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x").display().to_string();
    assert_eq!(stdeep(&["synth", "--seed", "0"], &[]).status.code(), Some(2));
    assert_eq!(stdeep(&["train", "--family", "vgg", "--manifest", "m.jsonl", "--out", &out], &[]).status.code(), Some(2));
    assert_eq!(stdeep(&["campaign", "--groups", "M1;", "--manifest", "m.jsonl", "--out", &out], &[]).status.code(), Some(2));
    assert_eq!(stdeep(&["train", "--out", &out], &[]).status.code(), Some(2));
    assert_eq!(stdeep(&["frobnicate"], &[]).status.code(), Some(2));
    // Nothing is written for rejected invocations.
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn runtime_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x").display().to_string();
    let o = stdeep(&["train", "--manifest", "/nonexistent/manifest.jsonl", "--out", &out], &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_precedence_and_provenance() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("synth.cfg");
    std::fs::write(&cfg, "# tiny corpus\nn_train = 3\nn_val = 1\nn_test = 2\nseed = 5\n").unwrap();
    let out = tmp.path().join("c");
    let cfg_s = cfg.display().to_string();
    let out_s = out.display().to_string();
    let o = stdeep(&["synth", "--config", &cfg_s, "--n-test", "1", "--out", &out_s], &[("STDEEP_SEED", "9")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = json(&out.join("run.json"));
    let rc = &run["run_config"];
    assert_eq!(rc["command"], "synth");
    assert_eq!(rc["version"], env!("CARGO_PKG_VERSION"));
    // File beats the environment, flags beat the file.
    assert_eq!(rc["seed"], 5);
    assert_eq!(rc["params"]["n_train"], "3");
    assert_eq!(rc["params"]["n_test"], "1");
    assert_eq!(rc["params"]["size"], "64");
    assert_eq!(run["result"]["counts"]["test/real"], 1);

    // Without a seed anywhere else the environment variable is used.
    let out2 = tmp.path().join("d").display().to_string();
    let o = stdeep(&["synth", "--n-train", "1", "--n-val", "1", "--n-test", "1", "--out", &out2], &[("STDEEP_SEED", "9")]);
    assert!(o.status.success());
    assert_eq!(json(&tmp.path().join("d/run.json"))["run_config"]["seed"], 9);

    std::fs::write(&cfg, "n_trian = 3\n").unwrap();
    let o = stdeep(&["synth", "--config", &cfg_s, "--out", &out_s], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_eval_and_probes_write_their_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = tiny_corpus(tmp.path());
    let p = |s: &str| tmp.path().join(s).display().to_string();
    let ok = |args: &[&str]| {
        let o = stdeep(args, &[]);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    ok(&["train", "--manifest", &manifest, "--family", "image2d", "--epochs", "1", "--exclude-methods", "M2", "--out", &p("t")]);
    let train = json(&tmp.path().join("t/train.json"));
    assert_eq!(train["run_config"]["params"]["exclude_methods"], "M2");
    assert_eq!(train["result"]["log"].as_array().unwrap().len(), 1);
    assert!(tmp.path().join("t/log.jsonl").exists());

    let ck = p("t/model.safetensors");
    ok(&["eval", "--checkpoint", &ck, "--manifest", &manifest, "--out", &p("e")]);
    // The withheld method is still tested.
    let eval = json(&tmp.path().join("e/eval.json"));
    assert!(eval["result"]["table"]["per_method"]["M2"].is_number());
    assert_eq!(std::fs::read_to_string(tmp.path().join("e/scores.csv")).unwrap().lines().count(), 1 + 10);

    // Evaluating "cross-dataset" on the training corpus is refused.
    let o = stdeep(&["eval", "--cross", "--checkpoint", &ck, "--manifest", &manifest, "--out", &p("x")], &[]);
    assert_eq!(o.status.code(), Some(2));

    ok(&["probe", "battery", "--checkpoint", &ck, "--manifest", &manifest, "--out", &p("b")]);
    let battery = json(&tmp.path().join("b/battery.json"));
    assert_eq!(battery["result"]["columns"][0], "original");
    assert_eq!(battery["result"]["columns"].as_array().unwrap().len(), 6);

    ok(&["probe", "cam", "--checkpoint", &ck, "--manifest", &manifest, "--video", "test_0000_M4", "--out", &p("c")]);
    assert!(tmp.path().join("c/cam_test_0000_M4.png").exists());

    let o = stdeep(&["probe", "embed", "--checkpoint", &ck, "--manifest", &manifest, "--out", &p("m")], &[]);
    assert_eq!(o.status.code(), Some(2), "10 videos cannot support perplexity 40");
    ok(&["probe", "embed", "--checkpoint", &ck, "--manifest", &manifest, "--perplexity", "3", "--iters", "250", "--out", &p("m")]);
    let csv = std::fs::read_to_string(tmp.path().join("m/embedding.csv")).unwrap();
    assert!(csv.starts_with("video_id,label,method,x,y\n"));
    assert!(tmp.path().join("m/embedding.png").exists());

    ok(&["report", "--inputs", &p("t"), &p("e"), &p("b"), "--out", &p("r")]);
    let md = std::fs::read_to_string(tmp.path().join("r/report.md")).unwrap();
    assert!(md.contains("(train)") && md.contains("(eval)") && md.contains("(probe battery)"));
}

#[test]
fn campaign_writes_csv_and_json() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = tiny_corpus(tmp.path());
    let out = tmp.path().join("g");
    let o = stdeep(
        &["campaign", "--manifest", &manifest, "--family", "image2d", "--epochs", "1", "--groups", "M1,M4;M2,M3", "--out", &out.display().to_string()],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let c = json(&out.join("campaign.json"));
    assert_eq!(c["result"]["runs"].as_array().unwrap().len(), 2);
    assert_eq!(c["run_config"]["params"]["groups"], "M1,M4;M2,M3");
    let csv = std::fs::read_to_string(out.join("campaign.csv")).unwrap();
    assert!(csv.contains("M1+M4,drop,"));
}
