//! End-to-end runs of the command-line tool on a tiny schedule.

use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_causalcf");

const TINY: &str = r#"
total_steps = 1200
iter_start = 400
iter_every = 400
checkpoint_every = 600
episode_length = 100

[cf]
epochs = 1
iterations = 4
steps = 10
warmup_max = 20

[sac]
learning_starts = 300
batch_size = 32
hidden = [16, 16]
"#;

fn causalcf(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn one_line_error(out: &Output, kind: &str) {
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("error: {kind}")), "{err}");
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_eval_transfer_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    std::fs::write(&config, TINY).unwrap();
    let run = dir.path().join("push");

    let summary: serde_json::Value = serde_json::from_str(&ok(&causalcf(&[
        "train", "--task", "pushing", "--variant", "causalcf_iter", "--config", s(&config), "--seed", "3", "--out", s(&run),
    ])))
    .unwrap();
    assert_eq!(summary["refresh_steps"], serde_json::json!([400, 800]));
    assert_eq!(summary["rep_version"], 2);
    assert!(run.join("config.json").exists());
    assert!(run.join("rep_v2.json").exists());
    assert_eq!(std::fs::read_to_string(run.join("train_log.csv")).unwrap().lines().count(), 13);

    let report = run.join("report.json");
    let text = ok(&causalcf(&[
        "eval", "--checkpoint", s(&run), "--protocols", "all", "--episodes", "1", "--seed", "0", "--report", s(&report),
    ]));
    assert_eq!(text.lines().count(), 13);
    let parsed: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed["protocols"].as_array().unwrap().len(), 12);
    assert_eq!(parsed["run"]["checkpoint_step"], 1200);

    let pick = dir.path().join("pick");
    let t: serde_json::Value = serde_json::from_str(&ok(&causalcf(&[
        "transfer", "--rep", s(&run), "--task", "picking", "--config", s(&config), "--out", s(&pick),
    ])))
    .unwrap();
    assert_eq!(t["rep_version"], 2);
    assert_eq!(t["cf_models_built"], 0);

    let plots = dir.path().join("plots");
    ok(&causalcf(&["report", "--runs", s(&run), s(&pick), "--out", s(&plots)]));
    for f in ["training_curves.svg", "protocols.svg"] {
        assert!(std::fs::metadata(plots.join(f)).unwrap().len() > 0);
    }
}

#[test]
fn resume_continues_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    std::fs::write(&config, TINY.replace("causalcf_iter", "intervene")).unwrap();
    let full = dir.path().join("full");
    ok(&causalcf(&["train", "--variant", "intervene", "--config", s(&config), "--out", s(&full)]));
    let resumed = dir.path().join("resumed");
    ok(&causalcf(&[
        "train", "--out", s(&resumed), "--resume", s(&full.join("checkpoints/step_600")),
    ]));
    assert_eq!(
        std::fs::read(full.join("train_log.csv")).unwrap(),
        std::fs::read(resumed.join("train_log.csv")).unwrap()
    );
}

#[test]
fn errors_are_single_lines() {
    let dir = tempfile::tempdir().unwrap();
    one_line_error(&causalcf(&["train", "--variant", "bogus", "--out", s(dir.path())]), "usage");
    one_line_error(
        &causalcf(&["eval", "--checkpoint", s(dir.path()), "--report", s(&dir.path().join("r.json"))]),
        "io",
    );
    one_line_error(&causalcf(&["transfer", "--rep", s(&dir.path().join("none")), "--out", s(dir.path())]), "transfer");
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "iter_start = 999999999\nvariant = \"causalcf_iter\"\n").unwrap();
    one_line_error(&causalcf(&["train", "--config", s(&bad), "--out", s(dir.path())]), "configuration");
}
