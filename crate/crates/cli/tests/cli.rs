use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use advmil::data::read_bag;
use serde_json::Value;

fn advmil(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advmil"))
        .args(args)
        .current_dir(dir)
        .env_remove("ADVMIL_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> Value {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("stderr is JSON")
}

const RUN: &str = r#"
seed = 5
[paths]
manifest = "cohort/manifest.csv"
output = "runs/a"
truth = "cohort/truth.json"
[train]
epochs = 3
warmup = 1
grad_accum = 8
[generator.encoder]
kind = "attention"
out_dim = 24
attention_hidden = 8
[discriminator]
patch_hidden = 16
embed_dim = 8
attention_hidden = 8
[eval]
n_draws = 9
mask_ratios = [0.0, 0.5]
"#;

fn cohort(dir: &Path) {
    ok(advmil(
        dir,
        &["synth", "--out", "cohort", "--n-patients", "40", "--patches", "32", "--feature-dim", "6", "--seed", "4"],
    ));
    fs::write(dir.join("run.toml"), RUN).unwrap();
}

#[test]
fn synth_writes_a_readable_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok(advmil(dir.path(), &["synth", "--out", "c", "--n-patients", "30", "--censor-rate", "0.4"]));
    assert_eq!(v["patients"], 30);
    let manifest = fs::read_to_string(dir.path().join("c/manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 31);
    let bag = read_bag(&dir.path().join("c/bags/synth-0007.amb")).unwrap();
    assert_eq!(bag.patient_id, "synth-0007");
    assert!(dir.path().join("c/truth.json").exists());
    assert!(dir.path().join("c/synth.toml").exists());
}

#[test]
fn train_eval_occlude_plot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    cohort(d);
    let v = ok(advmil(d, &["train", "--config", "run.toml", "--fold", "1"]));
    assert_eq!(v["epochs_run"], 3);
    for f in ["checkpoint.json", "history.csv", "resolved_config.toml", "run.json"] {
        assert!(d.join("runs/a").join(f).exists(), "{f} missing");
    }
    let history = fs::read_to_string(d.join("runs/a/history.csv")).unwrap();
    assert!(history.starts_with("epoch,d_loss,g_adv,g_sl,val_sl,lr_g"));
    assert_eq!(history.lines().count(), 4);

    let e = ok(advmil(d, &["eval", "--config", "runs/a/resolved_config.toml"]));
    let c = e["c_index"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&c));
    assert!(e["coverage"].as_f64().is_some());
    let report: Value = serde_json::from_str(&fs::read_to_string(d.join("runs/a/report.json")).unwrap()).unwrap();
    assert_eq!(report["patients"][0]["draws"].as_array().unwrap().len(), 9);
    assert_eq!(report["metadata"]["seed"], 5);

    ok(advmil(d, &["occlude", "--config", "run.toml", "--fold", "1", "--ratios", "0,0.75"]));
    let occ = fs::read_to_string(d.join("runs/a/occlusion.csv")).unwrap();
    assert_eq!(occ.lines().count(), 3);
    let first: Vec<&str> = occ.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[0], "0.0");
    assert_eq!(first[1].parse::<f64>().unwrap(), c, "ratio 0 reproduces the evaluation");

    let p = ok(advmil(d, &["plot", "--report", "runs/a/report.json"]));
    assert_eq!(p["plots"].as_array().unwrap().len(), 2);
    let svg = fs::read_to_string(d.join("runs/a/estimates.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<circle"));
    assert!(fs::read_to_string(d.join("runs/a/occlusion.svg")).unwrap().contains("<polyline"));
}

#[test]
fn fold_mismatch_with_checkpoint_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    cohort(d);
    ok(advmil(d, &["train", "--config", "run.toml", "--epochs", "1"]));
    let out = advmil(d, &["eval", "--config", "run.toml", "--fold", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "usage");
}

#[test]
fn reports_are_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    cohort(d);
    let mut reports = Vec::new();
    for threads in ["1", "3"] {
        let run = |args: &[&str]| {
            Command::new(env!("CARGO_BIN_EXE_advmil"))
                .args(args)
                .current_dir(d)
                .env("RAYON_NUM_THREADS", threads)
                .env_remove("ADVMIL_OUTPUT_ROOT")
                .output()
                .unwrap()
        };
        ok(run(&["train", "--config", "run.toml"]));
        ok(run(&["eval", "--config", "run.toml"]));
        reports.push(fs::read(d.join("runs/a/report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn semi_supervised_runs_hide_labels() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    cohort(d);
    let v = ok(advmil(
        d,
        &["train-semi", "--config", "run.toml", "--labeled-ratio", "0.25", "--k", "2", "--epochs", "4", "--out", "semi"],
    ));
    assert!(v["unlabeled"].as_u64().unwrap() > 0);
    let run: Value = serde_json::from_str(&fs::read_to_string(d.join("semi/run.json")).unwrap()).unwrap();
    let set = |k: &str| -> BTreeSet<String> {
        run[k].as_array().unwrap().iter().map(|s| s.as_str().unwrap().to_string()).collect()
    };
    let (train, masked) = (set("train_ids"), set("masked_ids"));
    assert!(!masked.is_empty());
    assert!(train.is_disjoint(&masked));
    assert_eq!(run["fold_usage"], serde_json::json!([2, 2]));

    let out = advmil(d, &["train-semi", "--config", "run.toml", "--labeled-ratio", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn output_root_env_prefixes_run_directories() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    cohort(d);
    let out = Command::new(env!("CARGO_BIN_EXE_advmil"))
        .args(["train", "--config", "run.toml", "--epochs", "1"])
        .current_dir(d)
        .env("ADVMIL_OUTPUT_ROOT", d.join("root"))
        .output()
        .unwrap();
    ok(out);
    assert!(d.join("root/runs/a/checkpoint.json").exists());
    assert!(!d.join("runs/a").exists());
}

#[test]
fn config_errors_exit_2_and_runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("unknown.toml"), "[paths]\nmanifest = \"m.csv\"\noutput = \"o\"\n[train]\nepohcs = 2\n").unwrap();
    fs::write(d.join("missing.toml"), "[paths]\nmanifest = \"m.csv\"\n").unwrap();
    fs::write(d.join("invalid.toml"), "[paths]\nmanifest = \"m.csv\"\noutput = \"o\"\n[train]\ngrad_accum = 0\n").unwrap();
    fs::write(d.join("absent.toml"), "[paths]\nmanifest = \"none.csv\"\noutput = \"o\"\n").unwrap();
    for cfg in ["unknown.toml", "missing.toml", "invalid.toml", "nothere.toml"] {
        let out = advmil(d, &["train", "--config", cfg]);
        assert_eq!(out.status.code(), Some(2), "{cfg}");
        assert_eq!(stderr_json(&out)["error"], "usage", "{cfg}");
    }
    assert_eq!(advmil(d, &["train", "--no-such-flag"]).status.code(), Some(2));
    let out = advmil(d, &["train", "--config", "absent.toml"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "runtime");
    assert!(err["message"].as_str().unwrap().contains("manifest"));
}

#[test]
fn build_packs_a_patch_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut table = String::from("row,col,f0,f1,f2\n");
    for (r, c) in [(0, 0), (0, 1), (1, 0), (4, 4), (4, 5)] {
        table.push_str(&format!("{r},{c},{},{},0.5\n", r as f32 * 0.1, c as f32 * 0.2));
    }
    fs::write(d.join("patches.csv"), table).unwrap();
    let v = ok(advmil(d, &["build", "--patches", "patches.csv", "--out", "bags/case-9.amb", "--eta", "2"]));
    assert_eq!(v["regions"], 2);
    assert_eq!(v["patches"], 5);
    let bag = read_bag(&d.join("bags/case-9.amb")).unwrap();
    assert_eq!(bag.patient_id, "case-9");
    assert_eq!((bag.n_patches(), bag.feature_dim()), (8, 3));

    fs::write(d.join("ragged.csv"), "row,col,f0\n0,0,1\n0,1\n").unwrap();
    let out = advmil(d, &["build", "--patches", "ragged.csv", "--out", "x.amb"]);
    assert_eq!(out.status.code(), Some(1));
}
