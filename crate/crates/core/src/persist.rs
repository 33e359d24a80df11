//! On-disk formats.
//!
//! Traces and reports are JSON Lines. A trace line holds, in order:
//! `t, l, b, p, c, l_c, d_mean, d_var, d`, where `l..c` describe the state
//! and action at `t`, `l_c/d_mean/d_var` the observation that followed, and
//! `d` the response times that were part of the state at `t`.
//!
//! Models and policies are JSON envelopes carrying a format tag, version
//! and a SHA-256 of the body, checked on load.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::agent::policy::PolicyNetwork;
use crate::error::{Error, Result};
use crate::loadgen::LoadPattern;
use crate::mesh::{
    hex_digest, ControlAction, LoadVector, ServiceObservation, SystemState, TraceRecord,
};
use crate::objectives::Scenario;
use crate::oracle::EvaluationReport;
use crate::sysmodel::SystemModel;

pub const FORMAT_VERSION: u32 = 1;
pub const MODEL_FORMAT: &str = "meshrl-model";
pub const POLICY_FORMAT: &str = "meshrl-policy";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub t: u64,
    pub l: Vec<f64>,
    pub b: Vec<f64>,
    pub p: Vec<f64>,
    pub c: Vec<u32>,
    pub l_c: Vec<f64>,
    pub d_mean: Vec<f64>,
    pub d_var: Vec<f64>,
    pub d: Vec<f64>,
}

impl From<&TraceRecord> for TraceLine {
    fn from(r: &TraceRecord) -> Self {
        TraceLine {
            t: r.t,
            l: r.state.loads.0.clone(),
            b: r.action.b.clone(),
            p: r.action.p.clone(),
            c: r.action.c.clone(),
            l_c: r.next.iter().map(|o| o.carried).collect(),
            d_mean: r.next.iter().map(|o| o.delay_mean).collect(),
            d_var: r.next.iter().map(|o| o.delay_var).collect(),
            d: r.state.delays.clone(),
        }
    }
}

impl TraceLine {
    pub fn into_record(self) -> Result<TraceRecord> {
        let m = self.l.len();
        if [
            self.b.len(),
            self.p.len(),
            self.l_c.len(),
            self.d_mean.len(),
            self.d_var.len(),
            self.d.len(),
        ]
        .iter()
        .any(|&n| n != m)
        {
            return Err(Error::invalid(
                "trace line",
                format!("step {}: per-service fields differ in length", self.t),
            ));
        }
        let next = (0..m)
            .map(|i| ServiceObservation {
                offered: self.l[i],
                carried: self.l_c[i],
                delay_mean: self.d_mean[i],
                delay_var: self.d_var[i],
            })
            .collect();
        Ok(TraceRecord {
            t: self.t,
            state: SystemState {
                loads: LoadVector(self.l),
                delays: self.d,
            },
            action: ControlAction {
                b: self.b,
                p: self.p,
                c: self.c,
            },
            next,
        })
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        let line = serde_json::to_string(&item).map_err(|e| Error::parse(path, e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_traces(path: &Path, records: &[TraceRecord]) -> Result<()> {
    write_lines(path, records.iter().map(TraceLine::from))
}

pub fn read_traces(path: &Path) -> Result<Vec<TraceRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records: Vec<TraceRecord> = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TraceLine = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, format!("line {}: {e}", n + 1)))?;
        let record = parsed
            .into_record()
            .map_err(|e| Error::parse(path, e.to_string()))?;
        if records.last().is_some_and(|prev| prev.t >= record.t) {
            return Err(Error::parse(
                path,
                format!("line {}: step indices must increase", n + 1),
            ));
        }
        records.push(record);
    }
    Ok(records)
}

/// Sidecar written next to a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub scenario: Scenario,
    /// Real-system sampling period the logical steps stand for, seconds.
    pub step_seconds: f64,
    pub steps: u64,
    pub records: usize,
    pub grid_fingerprint: String,
    pub pattern: LoadPattern,
    pub action_seed: u64,
    pub noise_seed: u64,
}

pub fn metadata_path(trace_path: &Path) -> std::path::PathBuf {
    let mut name = trace_path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    trace_path.with_file_name(name)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::parse(path, e.to_string()))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    sha256: String,
    body: T,
}

fn body_digest<T: Serialize>(body: &T) -> Result<String> {
    let text =
        serde_json::to_string(body).map_err(|e| Error::invalid("artifact", e.to_string()))?;
    Ok(hex_digest(text.as_bytes()))
}

fn save_enveloped<T: Serialize>(path: &Path, format: &str, body: &T) -> Result<()> {
    let envelope = Envelope {
        format: format.to_string(),
        version: FORMAT_VERSION,
        sha256: body_digest(body)?,
        body,
    };
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, &envelope).map_err(|e| Error::parse(path, e.to_string()))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn load_enveloped<T: Serialize + DeserializeOwned>(path: &Path, format: &str) -> Result<T> {
    let envelope: Envelope<T> = read_json(path)?;
    if envelope.format != format {
        return Err(Error::parse(
            path,
            format!("expected a {format} file, found {}", envelope.format),
        ));
    }
    if envelope.version != FORMAT_VERSION {
        return Err(Error::parse(
            path,
            format!("unsupported version {}", envelope.version),
        ));
    }
    if body_digest(&envelope.body)? != envelope.sha256 {
        return Err(Error::parse(path, "checksum mismatch"));
    }
    Ok(envelope.body)
}

pub fn save_model(path: &Path, model: &SystemModel) -> Result<()> {
    save_enveloped(path, MODEL_FORMAT, model)
}

pub fn load_model(path: &Path) -> Result<SystemModel> {
    load_enveloped(path, MODEL_FORMAT)
}

/// A trained policy with the scenario it was trained for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub scenario: Scenario,
    pub network: PolicyNetwork,
}

pub fn save_policy(path: &Path, policy: &PolicyFile) -> Result<()> {
    save_enveloped(path, POLICY_FORMAT, policy)
}

pub fn load_policy(path: &Path) -> Result<PolicyFile> {
    load_enveloped(path, POLICY_FORMAT)
}

#[derive(Serialize)]
struct ReportSummary<'a> {
    summary: bool,
    policy: &'a str,
    environment: crate::oracle::EnvKind,
    pattern: crate::loadgen::PatternKind,
    scoring: crate::oracle::Scoring,
    steps: usize,
    anr: f64,
    ci: f64,
}

/// One line per step followed by a summary line.
pub fn write_report(path: &Path, report: &EvaluationReport) -> Result<()> {
    let mut w = create(path)?;
    let mut put = |text: serde_json::Result<String>| -> Result<()> {
        let line = text.map_err(|e| Error::parse(path, e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))
    };
    for step in &report.steps {
        put(serde_json::to_string(step))?;
    }
    put(serde_json::to_string(&ReportSummary {
        summary: true,
        policy: &report.policy,
        environment: report.environment,
        pattern: report.pattern,
        scoring: report.scoring,
        steps: report.steps.len(),
        anr: report.anr,
        ci: report.ci,
    }))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(t: u64) -> TraceRecord {
        TraceRecord {
            t,
            state: SystemState {
                loads: LoadVector(vec![5.0, 20.0]),
                delays: vec![0.031, 0.1 / 3.0],
            },
            action: ControlAction {
                b: vec![0.2, 0.0],
                p: vec![0.25, 1.0],
                c: vec![4, 4],
            },
            next: vec![
                ServiceObservation {
                    offered: 5.0,
                    carried: 4.0,
                    delay_mean: 1.0 / 60.0,
                    delay_var: 2.89e-6,
                },
                ServiceObservation {
                    offered: 20.0,
                    carried: 20.0,
                    delay_mean: 0.2,
                    delay_var: 0.16,
                },
            ],
        }
    }

    #[test]
    fn trace_lines_keep_field_order_and_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let records = vec![record(0), record(2)];
        write_traces(&path, &records).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let first = text.lines().next().unwrap();
        let keys = [
            "\"t\"",
            "\"l\"",
            "\"b\"",
            "\"p\"",
            "\"c\"",
            "\"l_c\"",
            "\"d_mean\"",
            "\"d_var\"",
            "\"d\"",
        ];
        let positions: Vec<usize> = keys.iter().map(|k| first.find(k).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "{first}");
        assert_eq!(read_traces(&path).unwrap(), records);
    }

    #[test]
    fn malformed_traces_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        write_traces(&path, &[record(3), record(1)]).unwrap();
        assert!(read_traces(&path).is_err());
        std::fs::write(&path, "{\"t\": 0}\n").unwrap();
        assert!(matches!(read_traces(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn tampered_artifacts_fail_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let model = {
            let forest = crate::forest::RandomForest {
                trees: vec![crate::forest::RegressionTree::constant(0.1)],
                tree_seeds: vec![9],
            };
            SystemModel {
                services: 1,
                scalable: 0,
                feature_names: crate::sysmodel::feature_names(1, 0),
                target_names: crate::sysmodel::target_names(1),
                tree_count: 1,
                seed: 9,
                params: Default::default(),
                forests: vec![forest.clone(), forest],
            }
        };
        save_model(&path, &model).unwrap();
        assert_eq!(load_model(&path).unwrap(), model);
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"seed\":9", "\"seed\":8");
        std::fs::write(&path, text).unwrap();
        assert!(load_model(&path).is_err());
        assert!(load_policy(&path).is_err());
    }

    #[test]
    fn metadata_sits_next_to_trace() {
        assert_eq!(
            metadata_path(Path::new("runs/s1/traces.jsonl")),
            Path::new("runs/s1/traces.jsonl.meta.json")
        );
    }
}
