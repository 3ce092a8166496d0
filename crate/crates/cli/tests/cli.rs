use std::path::Path;
use std::process::{Command, Output};

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wilddrive"))
        .arg("--workdir")
        .arg(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = bin(dir, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

const FAST: [&str; 6] = [
    "--set",
    "sim.vocab_samples=200",
    "--set",
    "sim.vocab_restarts=2",
    "--set",
    "model.queries_per_task=4",
];

fn with_fast<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend(FAST);
    v
}

#[test]
fn selfcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["selfcheck"]);
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 4, "{out}");
}

#[test]
fn generation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = ok(dir.path(), &with_fast(&["gen", "--count", "6", "--seed", "3", "--out", "a"]));
    let b = ok(dir.path(), &with_fast(&["gen", "--count", "6", "--seed", "3", "--out", "b"]));
    let c = ok(dir.path(), &with_fast(&["gen", "--count", "6", "--seed", "4", "--out", "c"]));
    assert_eq!(a, b);
    assert_ne!(a, c);
    for f in std::fs::read_dir(dir.path().join("a")).unwrap() {
        let name = f.unwrap().file_name();
        let x = std::fs::read(dir.path().join("a").join(&name)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(&name)).unwrap();
        assert!(x == y, "{name:?} differs");
    }
}

#[test]
fn phase_two_needs_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &with_fast(&["gen", "--count", "4", "--out", "d"]));
    let o = bin(dir.path(), &["train", "--phase", "2", "--data", "d", "--out", "m"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kind=dependency"));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["gen", "--count", "many", "--out", "x"],
        vec!["train", "--phase", "3", "--data", "d", "--out", "m"],
        vec!["frobnicate"],
    ] {
        let o = bin(dir.path(), &args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("kind=usage"));
    }
    let o = bin(dir.path(), &["gen", "--count", "2", "--out", "x", "--set", "sim.colour=red"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kind=config"));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(dir.path(), &["train", "--phase", "1", "--data", "nowhere", "--out", "m"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn full_pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let epochs = ["--set", "train.epochs=1", "--set", "train.batch_size=4"];
    ok(d, &with_fast(&["gen", "--count", "8", "--seed", "1", "--out", "train"]));
    ok(d, &with_fast(&["gen", "--count", "4", "--seed", "2", "--out", "test"]));
    ok(d, &["label", "--data", "train", "--out", "labels"]);
    assert!(d.join("labels/vocabulary.json").is_file());
    for run in ["r1", "r2"] {
        let p1 = format!("{run}/p1");
        let p2 = format!("{run}/p2");
        let ckpt = format!("{p1}/model.ckpt");
        let mut a = with_fast(&["train", "--phase", "1", "--data", "train", "--out", &p1]);
        a.extend(epochs);
        ok(d, &a);
        let mut a = with_fast(&["train", "--phase", "2", "--data", "train", "--init", &ckpt, "--out", &p2]);
        a.extend(epochs);
        ok(d, &a);
        let ckpt2 = format!("{p2}/model.ckpt");
        let ev = format!("{run}/eval");
        let out = ok(d, &["eval", "--checkpoint", &ckpt2, "--data", "test", "--out", &ev]);
        assert!(out.contains("bleu_4"));
        let sw = format!("{run}/sweep");
        ok(d, &["sweep", "--checkpoint", &ckpt2, "--data", "test", "--out", &sw]);
        let pl = format!("{run}/plot");
        let preds = format!("{ev}/predictions.jsonl");
        ok(d, &["plot", "--reports", &sw, "--predictions", &preds, "--out", &pl]);
        assert!(d.join(&pl).join("trajectories.svg").is_file());
    }
    for f in ["p1/model.ckpt", "p2/model.ckpt", "p1/train_log.jsonl", "eval/report.json", "eval/predictions.jsonl", "sweep/combined.json"] {
        let a = std::fs::read(d.join("r1").join(f)).unwrap();
        let b = std::fs::read(d.join("r2").join(f)).unwrap();
        assert!(a == b, "{f} differs between identical runs");
    }
}

#[test]
fn evaluation_rejects_a_foreign_feature_space() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &with_fast(&["gen", "--count", "4", "--out", "a"]));
    let mut other = with_fast(&["gen", "--count", "4", "--out", "b"]);
    other.extend(["--set", "sim.projection_seed=99"]);
    ok(d, &other);
    let mut a = with_fast(&["train", "--phase", "1", "--data", "a", "--out", "m"]);
    a.extend(["--set", "train.epochs=1"]);
    ok(d, &a);
    let o = bin(d, &["eval", "--checkpoint", "m/model.ckpt", "--data", "b", "--out", "e"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kind=checksum"));
}
