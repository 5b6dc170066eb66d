use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lantern::synth::{manifest_bytes, DatasetManifest, QuestionSpec, QuestionType};
use serde_json::Value;

const SMALL: &str = "\
# a run small enough for tests
n_users = 240
n_binary = 8
n_single = 3
n_multi = 3
survey_dim = 10
external_dim = 8
epochs = 2
steps_per_epoch = 10
validation_steps = 2
";

fn lantern(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lantern"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: tempfile::TempDir,
    config: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("small.cfg");
        std::fs::write(&config, SMALL).unwrap();
        Self { dir, config }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Runs `command` with the small config and asserts success.
    fn run(&self, command: &str, out: &str, extra: &[&str]) -> Value {
        let out = self.path(out);
        let mut args = vec![command, "--config", s(&self.config), "--out", s(&out)];
        args.extend_from_slice(extra);
        let o = lantern(&args);
        assert!(
            o.status.success(),
            "{command} failed: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        assert!(out.join("config.txt").is_file());
        serde_json::from_slice(&std::fs::read(out.join("stamp.json")).unwrap()).unwrap()
    }
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn pipeline_writes_expected_artifacts() {
    let ws = Workspace::new();
    let gen = ws.run("generate", "data", &[]);
    let data = ws.path("data");
    assert!(data.join("manifest.json").is_file() && data.join("records.jsonl").is_file());

    let ds = format!("dataset={}", s(&data));
    let tr = ws.run("train", "train", &["--set", &ds]);
    assert_eq!(tr["dataset_digest"], gen["dataset_digest"]);
    let ck = format!("checkpoint={}", s(&ws.path("train/model.lntn")));
    assert_eq!(csv_rows(&ws.path("train/train_log.csv")).len(), 2);

    ws.run("evaluate", "eval", &["--set", &ds, "--set", &ck, "--threshold", "0.4"]);
    let metrics = csv_rows(&ws.path("eval/metrics.csv"));
    assert_eq!(metrics.len(), 1);
    assert_eq!(metrics[0][0], "0.4");
    let segments: Vec<String> = csv_rows(&ws.path("eval/segments.csv")).into_iter().map(|r| r[0].clone()).collect();
    assert_eq!(segments, ["rare", "frequent"]);

    ws.run("sweep", "sweep", &["--set", &ds, "--set", &ck]);
    let thresholds: Vec<String> = csv_rows(&ws.path("sweep/sweep.csv")).into_iter().map(|r| r[0].clone()).collect();
    assert_eq!(thresholds, ["0.3", "0.5", "0.7"]);
    ws.run("sweep", "sweep_grid", &["--set", &ds, "--set", &ck, "--grid", "0.1,0.9"]);
    assert_eq!(csv_rows(&ws.path("sweep_grid/sweep.csv")).len(), 2);

    ws.run("gate-report", "gates", &["--set", &ds, "--set", &ck]);
    let total: u64 = csv_rows(&ws.path("gates/gates.csv")).iter().map(|r| r[2].parse::<u64>().unwrap()).sum();
    // 24 held-out users, 32 gate units each.
    assert_eq!(total, 24 * 32);
    assert_eq!(csv_rows(&ws.path("gates/gates.csv")).len(), 50);

    ws.run("ablate", "ablate", &["--set", &ds]);
    let variants: Vec<String> = csv_rows(&ws.path("ablate/ablation.csv")).into_iter().map(|r| r[0].clone()).collect();
    assert_eq!(variants, ["survey_only", "external_only", "fused"]);
}

#[test]
fn stamps_are_deterministic() {
    let ws = Workspace::new();
    let a = ws.run("train", "a", &["--seed", "3"]);
    let b = ws.run("train", "b", &["--seed", "3"]);
    assert_eq!(a, b);
    let c = ws.run("train", "c", &["--seed", "4"]);
    assert_ne!(a["dataset_digest"], c["dataset_digest"]);
    assert_ne!(a["artifacts"]["model.lntn"], c["artifacts"]["model.lntn"]);

    for name in ["model.lntn", "train_log.csv", "config.txt"] {
        let bytes = std::fs::read(ws.path("a").join(name)).unwrap();
        assert_eq!(a["artifacts"][name], lantern::cli::sha256_hex(&bytes));
    }
    assert_eq!(a["seed"], 3);
    assert_eq!(a["config"]["n_users"], "240");
}

#[test]
fn resolved_config_reproduces_the_run() {
    let ws = Workspace::new();
    let first = ws.run("generate", "first", &["--seed", "8", "--set", "cycle_id=2"]);
    let resolved = ws.path("first/config.txt");
    let out = ws.path("second");
    let o = lantern(&["generate", "--config", s(&resolved), "--out", s(&out)]);
    assert!(o.status.success());
    let second: Value = serde_json::from_slice(&std::fs::read(out.join("stamp.json")).unwrap()).unwrap();
    assert_eq!(first, second);
}

fn manifest(cycle: u32, questions: &[(u32, QuestionType, usize)]) -> Vec<u8> {
    let specs: Vec<QuestionSpec> = questions
        .iter()
        .map(|&(question_id, question_type, n_options)| QuestionSpec {
            question_id,
            question_type,
            n_options,
            serve_probability: 0.9,
        })
        .collect();
    manifest_bytes(&DatasetManifest::from_questions(4, 4, &specs, 0, cycle).unwrap())
}

#[test]
fn label_diff_reports_question_churn() {
    use QuestionType::*;
    let ws = Workspace::new();
    let old = ws.path("old.json");
    let new = ws.path("new.json");
    std::fs::write(&old, manifest(0, &[(0, Binary, 1), (1, SingleChoice, 3), (2, Binary, 1)])).unwrap();
    std::fs::write(&new, manifest(1, &[(0, Binary, 1), (1, SingleChoice, 3), (3, MultiChoice, 2)])).unwrap();
    let o = lantern(&[
        "label-diff",
        "--set",
        &format!("old_manifest={}", s(&old)),
        "--set",
        &format!("new_manifest={}", s(&new)),
        "--out",
        s(&ws.path("diff")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(ws.path("diff/label_diff.txt")).unwrap();
    assert!(text.contains("added (2): q3#0 q3#1\n"), "{text}");
    assert!(text.contains("removed (1): q2#0\n"), "{text}");
    assert!(text.contains("retained: 4\n"));
    assert!(text.contains("MISALIGNED"));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().next(), text.lines().next());

    // A dataset directory works as well as a manifest file.
    ws.run("generate", "data", &[]);
    let data = format!("old_manifest={}", s(&ws.path("data")));
    let same = format!("new_manifest={}", s(&ws.path("data/manifest.json")));
    let o = lantern(&["label-diff", "--set", &data, "--set", &same, "--out", s(&ws.path("same"))]);
    assert!(o.status.success());
    assert!(std::fs::read_to_string(ws.path("same/label_diff.txt")).unwrap().contains("status: aligned"));
}

#[test]
fn errors_map_to_exit_codes_and_write_nothing() {
    let ws = Workspace::new();
    let out = ws.path("never");

    let o = lantern(&["train", "--set", "learnin_rate=0.1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learnin_rate"));

    let bad_cfg = ws.path("bad.cfg");
    std::fs::write(&bad_cfg, "epochs = 2\nwidth = 3\n").unwrap();
    let o = lantern(&["train", "--config", s(&bad_cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`width`"));

    let o = lantern(&["train", "--config", s(&ws.path("missing.cfg")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));

    let o = lantern(&["evaluate", "--set", "dataset=/nonexistent/data", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));

    let o = lantern(&["sweep", "--grid", "0.7,0.3", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));

    let o = lantern(&["label-diff", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("old_manifest"));

    let o = lantern(&["train"]);
    assert_eq!(o.status.code(), Some(1));
    let o = lantern(&["retrain", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let o = lantern(&["train", "--seed", "minus-one", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));

    assert!(!out.exists());
}

#[test]
fn checkpoint_must_match_dataset() {
    let ws = Workspace::new();
    ws.run("train", "t", &[]);
    let out = ws.path("eval");
    let o = lantern(&[
        "evaluate",
        "--config",
        s(&ws.config),
        "--set",
        "survey_dim=11",
        "--set",
        &format!("checkpoint={}", s(&ws.path("t/model.lntn"))),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint"));
    assert!(!out.exists());
}
