use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bagnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bagnet"))
        .args(args)
        .current_dir(dir)
        .env_remove("BAGNET_WORKERS")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = bagnet(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    bagnet(dir, args).status.code().expect("exit code")
}

/// Train and validation sets plus a one-epoch BagNet-5 checkpoint.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        ok(d, &["dataset", "synth", "--per-class", "16", "--seed", "1", "--out", "train.bagd"]);
        ok(d, &["dataset", "synth", "--per-class", "6", "--seed", "2", "--out", "val.bagd"]);
        ok(d, &["train", "--config", "bagnet5-32", "--data", "train.bagd", "--val", "val.bagd", "--epochs", "1", "--batch-size", "16", "--out", "run"]);
        Fixture { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn read(&self, rel: &str) -> Vec<u8> {
        fs::read(self.path().join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }
}

const CKPT: &str = "run/checkpoint.bagc";

#[test]
fn synth_writes_a_dataset_and_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["dataset", "synth", "--classes", "3", "--per-class", "5", "--size", "16", "--texture-scale", "4", "--seed", "9", "--out", "d.bagd"]);
    let text = ok(d, &["dataset", "inspect", "d.bagd"]);
    assert!(text.contains("count 15"), "{text}");
    assert!(text.contains("size 16") && text.contains("classes 3"), "{text}");
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(d.join("d.bagd.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "dataset synth");
    assert_eq!(manifest["seeds"]["seed"], 9);
    assert_eq!(manifest["config"]["per_class"], 5);
    assert_eq!(manifest["workers"], 1);
}

#[test]
fn training_writes_metrics_checkpoint_and_manifest() {
    let f = Fixture::new();
    let metrics = String::from_utf8(f.read("run/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2, "{metrics}");
    assert!(metrics.starts_with("epoch,"));
    let manifest: serde_json::Value = serde_json::from_slice(&f.read("run/manifest.json")).unwrap();
    let inputs = manifest["inputs"].as_array().unwrap();
    assert_eq!(inputs.len(), 2);
    assert!(inputs.iter().all(|i| i["sha256"].as_str().unwrap().len() == 64));
    assert_eq!(inputs[0]["bytes"], f.read("train.bagd").len());
    assert!(!f.read(CKPT).is_empty());
}

#[test]
fn eval_with_k_equal_to_class_count_is_perfect() {
    let f = Fixture::new();
    let text = ok(f.path(), &["eval", "--checkpoint", CKPT, "--data", "val.bagd", "--topk", "4", "--out", "ev"]);
    assert!(text.starts_with("top-4 accuracy 1 "), "{text}");
    let csv = String::from_utf8(f.read("ev/eval.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "class,name,count,accuracy");
    assert_eq!(csv.lines().last().unwrap(), "all,all,24,1");
}

#[test]
fn heatmap_writes_ppm_and_csv() {
    let f = Fixture::new();
    ok(f.path(), &["analyze", "heatmap", "--checkpoint", CKPT, "--data", "val.bagd", "--image", "3", "--class", "2", "--out", "hm"]);
    let ppm = f.read("hm/heatmap_3_2.ppm");
    assert!(ppm.starts_with(b"P6\n32 32\n255\n"));
    assert_eq!(ppm.len(), 13 + 32 * 32 * 3);
    let csv = String::from_utf8(f.read("hm/heatmap_3_2.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8 * 8);
}

#[test]
fn sensitivity_reports_one_curve_per_source() {
    let f = Fixture::new();
    ok(
        f.path(),
        &["analyze", "sensitivity", "--checkpoint", CKPT, "--data", "val.bagd", "--limit", "3", "--n-max", "2", "--ig-steps", "8", "--out", "sens"],
    );
    let csv = String::from_utf8(f.read("sens/sensitivity.csv")).unwrap();
    for source in ["bagnet", "saliency", "ig", "random"] {
        assert_eq!(csv.lines().filter(|l| l.starts_with(&format!("{source},"))).count(), 3, "{source}:\n{csv}");
    }
}

#[test]
fn threshold_and_interaction_write_their_tables() {
    let f = Fixture::new();
    let d = f.path();
    ok(d, &["analyze", "threshold", "--checkpoint", CKPT, "--data", "val.bagd", "--mode", "both", "--grid", "5", "--out", "th"]);
    let th = String::from_utf8(f.read("th/threshold.csv")).unwrap();
    assert!(th.lines().any(|l| l.starts_with("clamp,-inf,")), "{th}");
    assert!(th.lines().any(|l| l.starts_with("binarize,")), "{th}");
    ok(d, &["analyze", "interaction", "--checkpoint", CKPT, "--data", "val.bagd", "--p", "8", "--out", "ia"]);
    let summary = String::from_utf8(f.read("ia/interaction_summary.csv")).unwrap();
    assert_eq!(summary.lines().next().unwrap(), "p,images,pearson_r,max_relative_gap");
    assert_eq!(String::from_utf8(f.read("ia/interaction.csv")).unwrap().lines().count(), 1 + 24);
}

#[test]
fn repeated_runs_produce_identical_artifacts() {
    let f = Fixture::new();
    let d = f.path();
    ok(d, &["train", "--config", "bagnet5-32", "--data", "train.bagd", "--val", "val.bagd", "--epochs", "1", "--batch-size", "16", "--out", "again"]);
    assert_eq!(f.read("run/checkpoint.bagc"), f.read("again/checkpoint.bagc"));
    assert_eq!(f.read("run/metrics.csv"), f.read("again/metrics.csv"));

    let runs: [(&str, &[&str]); 5] = [
        ("eval", &["eval", "--checkpoint", CKPT, "--data", "val.bagd"]),
        ("heat", &["analyze", "heatmap", "--checkpoint", CKPT, "--data", "val.bagd", "--image", "1"]),
        ("sens", &["analyze", "sensitivity", "--checkpoint", CKPT, "--data", "val.bagd", "--limit", "2", "--n-max", "2", "--ig-steps", "8"]),
        ("thr", &["analyze", "threshold", "--checkpoint", CKPT, "--data", "val.bagd", "--grid", "4"]),
        ("pat", &["analyze", "patches", "--checkpoint", CKPT, "--data", "val.bagd", "--class", "1", "--k", "3"]),
    ];
    for (name, args) in runs {
        for (rep, workers) in [("a", "1"), ("b", "1"), ("c", "2")] {
            let out = format!("{name}_{rep}");
            let mut full: Vec<&str> = vec!["--workers", workers];
            full.extend_from_slice(args);
            full.extend_from_slice(&["--out", &out]);
            ok(d, &full);
        }
        let a = artifacts(&d.join(format!("{name}_a")));
        assert!(!a.is_empty(), "{name} wrote nothing");
        assert_eq!(a, artifacts(&d.join(format!("{name}_b"))), "{name} differs between runs");
        assert_eq!(a, artifacts(&d.join(format!("{name}_c"))), "{name} differs across worker counts");
    }
}

/// Every non-manifest file under `dir` with its bytes, in path order.
fn artifacts(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != "manifest.json" {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let f = Fixture::new();
    let d = f.path();
    assert_eq!(code(d, &["analyze", "scramble", "--checkpoint", CKPT, "--data", "val.bagd", "--out", "s"]), 4);
    fs::write(d.join("junk.bagd"), b"junk data").unwrap();
    assert_eq!(code(d, &["eval", "--checkpoint", CKPT, "--data", "junk.bagd"]), 3);
    assert_eq!(code(d, &["eval", "--checkpoint", "junk.bagd", "--data", "val.bagd"]), 3);
    assert_eq!(code(d, &["eval", "--checkpoint", CKPT, "--data", "missing.bagd"]), 1);
    assert_eq!(code(d, &["eval", "--bogus"]), 2);
    assert_eq!(code(d, &["--workers", "0", "eval", "--checkpoint", CKPT, "--data", "val.bagd"]), 2);
    assert_eq!(code(d, &["train", "--config", "bagnet5-32", "--data", "train.bagd", "--epochs", "1", "--lr0", "1e30", "--momentum", "0", "--out", "boom"]), 5);
    assert!(d.join("boom/last_good.bagc").exists());
}

#[test]
fn resume_continues_to_the_same_checkpoint() {
    let f = Fixture::new();
    let d = f.path();
    let base = ["train", "--config", "bagnet5-32", "--data", "train.bagd", "--val", "val.bagd", "--batch-size", "16"];
    let with = |extra: &[&'static str]| base.iter().copied().chain(extra.iter().copied()).collect::<Vec<_>>();
    ok(d, &with(&["--epochs", "2", "--out", "full"]));
    ok(d, &with(&["--epochs", "2", "--resume", CKPT, "--out", "resumed"]));
    assert_eq!(f.read("full/checkpoint.bagc"), f.read("resumed/checkpoint.bagc"));
}
