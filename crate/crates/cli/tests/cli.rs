use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const ROOT: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../..");

fn roundtrip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roundtrip")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn root(rel: &str) -> PathBuf {
    Path::new(ROOT).join(rel)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn smoke_run(dir: &Path) -> Output {
    let smoke = root("configs/smoke.toml");
    let out = format!("output_dir={:?}", dir.display().to_string());
    roundtrip(&["train", "--config", smoke.to_str().unwrap(), "--set", &out])
}

#[test]
fn fixtures_check_passes_on_committed_fixtures() {
    let fixtures = root("fixtures/metrics.json");
    let o = roundtrip(&["fixtures-check", "--fixtures", fixtures.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("221 records"));
}

#[test]
fn tampered_fixture_exits_with_conformance_code() {
    let text = std::fs::read_to_string(root("fixtures/metrics.json")).unwrap();
    let tampered = text.replacen("\"chrf_pp\": 100.0", "\"chrf_pp\": 50.0", 1);
    assert_ne!(text, tampered);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.json");
    std::fs::write(&path, tampered).unwrap();
    let o = roundtrip(&["fixtures-check", "--fixtures", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{o:?}");
}

#[test]
fn invalid_config_value_exits_with_config_code() {
    let smoke = root("configs/smoke.toml");
    let o = roundtrip(&["train", "--config", smoke.to_str().unwrap(), "--set", "grpo.clip_epsilon=1.5"]);
    assert_eq!(o.status.code(), Some(2), "{o:?}");
    assert!(String::from_utf8_lossy(&o.stderr).contains("clip_epsilon"));
}

#[test]
fn unknown_config_key_exits_with_config_code() {
    let smoke = root("configs/smoke.toml");
    let o = roundtrip(&["train", "--config", smoke.to_str().unwrap(), "--set", "grpo.not_a_key=1"]);
    assert_eq!(o.status.code(), Some(2), "{o:?}");
}

#[test]
fn missing_checkpoint_exits_with_runtime_code() {
    let o = roundtrip(&["eval", "--checkpoint", "/nonexistent/final.ckpt"]);
    assert_eq!(o.status.code(), Some(3), "{o:?}");
}

#[test]
fn gen_data_writes_corpora() {
    let dir = tempfile::tempdir().unwrap();
    let o = roundtrip(&["gen-data", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    assert!(std::fs::read_dir(dir.path()).unwrap().count() >= 5);
}

#[test]
fn train_eval_and_curves_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let o = smoke_run(dir.path());
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("20 steps"));
    for f in ["summary.json", "curves.csv", "steps.jsonl", "config.toml", "seeds.json", "version.txt"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }

    let ckpt = dir.path().join("checkpoints/final.ckpt");
    let o = roundtrip(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--split", "dev"]);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    assert!(text.contains("split dev at step 20") && text.contains("before"), "{text}");

    let o = roundtrip(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--split", "train"]);
    assert_eq!(o.status.code(), Some(3), "{o:?}");

    let o = roundtrip(&["curves", "--run", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("step,forward_chrf,backward_reward,kl_mean,loss"));
    assert_eq!(lines.count(), 5);

    let o = roundtrip(&["curves", "--run", dir.path().to_str().unwrap(), "--per-step"]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(stdout(&o).lines().count(), 21);
}

#[test]
fn identical_runs_write_identical_artifacts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(smoke_run(a.path()).status.success());
    assert!(smoke_run(b.path()).status.success());
    for f in ["curves.csv", "steps.jsonl", "checkpoints/final.ckpt", "checkpoints/step-000010.adamw"] {
        let (x, y) = (std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        assert!(x == y, "{f} differs");
    }
}
