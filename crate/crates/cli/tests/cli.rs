use std::path::Path;
use std::process::{Command, Output};

fn innet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_innet")).args(args).output().expect("spawn innet")
}

fn run_args<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["run", "--iters", "2000", "--out-dir", out];
    v.extend_from_slice(extra);
    v
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn run_plot_and_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = innet(&run_args(out, &["--override", "experiment=exp2", "--override", "snapshot.every=1000"]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = dir.path().join("metrics.jsonl");
    assert!(metrics.exists());
    let summary: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&o.stdout).lines().next().unwrap()).unwrap();
    assert_eq!(summary["iterations"], 2000);

    let o = innet(&["plot", metrics.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let svg = std::fs::read_to_string(dir.path().join("metrics.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("max solved length"));

    let snap = dir.path().join("snapshots").join("snapshot_2000.json");
    assert!(dir.path().join("snapshots").join("snapshot_1000.json").exists());
    let o = innet(&["inspect-snapshot", snap.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.starts_with("iteration 2000"));
    assert!(text.contains("node") && text.contains("checksum pu0"));
    let o = innet(&["inspect-snapshot", "--json", snap.to_str().unwrap()]);
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["iteration"], 2000);
}

#[test]
fn repeat_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let o = innet(&run_args(d.to_str().unwrap(), &["--config", &config("exp1_training_wheels.toml"), "--seed", "3"]));
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |d: &Path| std::fs::read(d.join("metrics.jsonl")).unwrap();
    assert_eq!(read(&a), read(&b));
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name).to_string_lossy().into_owned()
}

#[test]
fn several_seeds_run_as_a_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = innet(&run_args(out, &["--seed", "1", "--seed", "2", "--override", "snapshot.enabled=false"]));
    assert_eq!(code(&o), 0);
    for s in [1, 2] {
        assert!(dir.path().join(format!("seed_{s}/metrics.jsonl")).exists());
    }
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 2);
}

#[test]
fn pretrain_writes_params() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = innet(&["pretrain", "--out-dir", out, "--override", "pretrain.budget=500"]);
    assert_eq!(code(&o), 0);
    let params = dir.path().join("params.json");
    assert!(params.exists());
    let run = innet(&run_args(
        out,
        &["--override", "variant=pretrained_pus", "--override", &format!("pretrain.params=\"{}\"", params.display())],
    ));
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for extra in [
        vec!["--override", "cu.gama=0.5"],
        vec!["--override", "nonsense"],
        vec!["--override", "cu.gamma=3"],
        vec!["--config", "/nonexistent/config.toml"],
        vec!["--override", "experiment=exp2", "--override", "variant=inputs_to_cu"],
    ] {
        let o = innet(&run_args(out, &extra));
        assert_eq!(code(&o), 2, "{extra:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stderr).contains("config error"));
    }
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "not json").unwrap();
    assert_eq!(code(&innet(&["inspect-snapshot", bad.to_str().unwrap()])), 2);
    assert_eq!(code(&innet(&["plot", "/nonexistent/metrics.jsonl"])), 2);
}

#[test]
fn runtime_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = innet(&run_args(blocker.to_str().unwrap(), &[]));
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let missing = dir.path().join("missing.json");
    let o = innet(&run_args(
        dir.path().to_str().unwrap(),
        &["--override", "variant=pretrained_pus", "--override", &format!("pretrain.params=\"{}\"", missing.display())],
    ));
    assert_eq!(code(&o), 3);
}
