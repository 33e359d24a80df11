use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use meshrl::config::ScenarioConfig;
use meshrl::objectives::Scenario;
use meshrl::persist;

fn config(id: u8) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../configs/scenario{id}.toml"))
}

fn meshrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meshrl"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Collect a short trace and fit a model for scenario 1; returns (traces, model).
fn fitted(dir: &Path) -> (PathBuf, PathBuf) {
    let traces = dir.join("traces.jsonl");
    let model = dir.join("model.json");
    ok(&meshrl(&[
        "collect",
        "--config",
        s(&config(1)),
        "--steps",
        "1000",
        "--out",
        s(&traces),
    ]));
    ok(&meshrl(&[
        "fit-model",
        "--config",
        s(&config(1)),
        "--traces",
        s(&traces),
        "--out",
        s(&model),
    ]));
    (traces, model)
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(meshrl(&[]).status.code(), Some(1));
    assert_eq!(meshrl(&["collect"]).status.code(), Some(1));
    assert_eq!(
        meshrl(&["train", "--model", "m", "--out", "o"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(meshrl(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = meshrl(&[
        "collect",
        "--config",
        s(&dir.path().join("absent.toml")),
        "--out",
        s(&dir.path().join("t")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn collect_is_deterministic_and_writes_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for p in [&a, &b] {
        ok(&meshrl(&[
            "collect",
            "--config",
            s(&config(2)),
            "--steps",
            "1000",
            "--seed",
            "5",
            "--out",
            s(p),
        ]));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let records = persist::read_traces(&a).unwrap();
    assert!(!records.is_empty() && records.len() <= 1000);
    let meta: persist::TraceMetadata = persist::read_json(&persist::metadata_path(&a)).unwrap();
    assert_eq!(meta.records, records.len());
    assert_eq!((meta.action_seed, meta.noise_seed), (5, 6));
    assert_eq!(meta.scenario, Scenario::Utility);
}

#[test]
fn fit_refuses_mismatched_traces() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("t.jsonl");
    ok(&meshrl(&[
        "collect",
        "--config",
        s(&config(1)),
        "--steps",
        "300",
        "--out",
        s(&traces),
    ]));

    // Scenario 4 acts on a different grid.
    let model = dir.path().join("m.json");
    let out = meshrl(&[
        "fit-model",
        "--config",
        s(&config(4)),
        "--traces",
        s(&traces),
        "--out",
        s(&model),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("incompatible"));

    // Without the sidecar the arity check still catches a widened action.
    let mut records = persist::read_traces(&traces).unwrap();
    for r in &mut records {
        r.action.c.push(4);
    }
    let widened = dir.path().join("w.jsonl");
    persist::write_traces(&widened, &records).unwrap();
    let out = meshrl(&[
        "fit-model",
        "--config",
        s(&config(1)),
        "--traces",
        s(&widened),
        "--out",
        s(&model),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!model.exists());
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let (_, model) = fitted(dir.path());
    let loaded = persist::load_model(&model).unwrap();
    assert_eq!(loaded.feature_arity(), 2 + 2 + 2 + 2);

    // Oracle on the simulator is optimal by construction.
    let oracle_dir = dir.path().join("oracle");
    let out = meshrl(&[
        "oracle",
        "--config",
        s(&config(1)),
        "--model",
        s(&model),
        "--env",
        "sim",
        "--pattern",
        "random",
        "--steps",
        "30",
        "--out",
        s(&oracle_dir),
    ]);
    ok(&out);
    let line = String::from_utf8_lossy(&out.stdout);
    assert!(line.contains(" 1.000 "), "{line}");
    assert!(oracle_dir.join("report-oracle-sim-random.jsonl").exists());
    assert!(oracle_dir.join("plot-oracle-sim-random.csv").exists());

    let runs = dir.path().join("runs");
    ok(&meshrl(&[
        "train",
        "--config",
        s(&config(1)),
        "--model",
        s(&model),
        "--steps",
        "16",
        "--out",
        s(&runs),
    ]));
    let policy = runs.join("policy-scenario1.json");
    assert!(policy.exists() && runs.join("curve-scenario1.csv").exists());

    let report_dir = dir.path().join("report");
    ok(&meshrl(&[
        "report",
        "--config",
        s(&config(1)),
        "--model",
        s(&model),
        "--policy",
        s(&policy),
        "--out",
        s(&report_dir),
    ]));
    let summary = std::fs::read_to_string(report_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5, "{summary}");

    // Same policy, different action grid: clean refusal.
    let mut cfg = ScenarioConfig::load(&config(1)).unwrap();
    cfg.grid.b_levels = vec![0.0, 0.5];
    let other = dir.path().join("other.toml");
    std::fs::write(&other, cfg.to_toml().unwrap()).unwrap();
    let out = meshrl(&[
        "evaluate",
        "--config",
        s(&other),
        "--model",
        s(&model),
        "--policy",
        s(&policy),
        "--env",
        "sim",
        "--pattern",
        "sine",
        "--steps",
        "5",
        "--out",
        s(&report_dir),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    // A scenario-1 policy is not accepted for scenario 2.
    let out = meshrl(&[
        "evaluate",
        "--config",
        s(&config(2)),
        "--model",
        s(&model),
        "--policy",
        s(&policy),
        "--env",
        "sim",
        "--pattern",
        "sine",
        "--steps",
        "5",
        "--out",
        s(&report_dir),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (_, model) = fitted(dir.path());
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let runs = dir.path().join(run);
        ok(&meshrl(&[
            "train",
            "--config",
            s(&config(1)),
            "--model",
            s(&model),
            "--steps",
            "8",
            "--seed",
            "3",
            "--out",
            s(&runs),
        ]));
        outputs.push(std::fs::read(runs.join("policy-scenario1.json")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn duplicate_scenarios_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (_, model) = fitted(dir.path());
    let out = meshrl(&[
        "train",
        "--config",
        s(&config(1)),
        "--config",
        s(&config(1)),
        "--model",
        s(&model),
        "--out",
        s(&dir.path().join("r")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
