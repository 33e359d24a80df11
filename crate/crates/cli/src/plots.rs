//! Flat CSV series for plotting; no rendering happens here.

use std::path::Path;

use meshrl::agent::LearningCurve;
use meshrl::oracle::EvaluationReport;
use meshrl::{Error, Result};
use serde::Serialize;

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::parse(path, e)
}

pub fn write_curve(path: &Path, curve: &LearningCurve) -> Result<()> {
    let mut w = writer(path)?;
    for p in &curve.points {
        w.serialize(p).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One row per step: loads, carried loads, delays against bounds, rewards
/// and NR, then agent vs optimal knob settings.
pub fn write_plot(path: &Path, report: &EvaluationReport, bounds: &[f64]) -> Result<()> {
    let Some(first) = report.steps.first() else {
        return Ok(());
    };
    let m = first.load.len();
    let k = first.cores.len();
    let mut header = vec!["t".to_string()];
    for i in 1..=m {
        header.extend([
            format!("load{i}"),
            format!("carried{i}"),
            format!("delay{i}"),
            format!("bound{i}"),
        ]);
    }
    header.extend(["agent_reward", "optimal_reward", "nr"].map(String::from));
    for i in 1..=m {
        header.extend([
            format!("b{i}"),
            format!("p{i}"),
            format!("opt_b{i}"),
            format!("opt_p{i}"),
        ]);
    }
    for j in 1..=k {
        header.extend([format!("c{j}"), format!("opt_c{j}")]);
    }
    let mut w = writer(path)?;
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for s in &report.steps {
        let mut row = vec![s.t.to_string()];
        for (i, &bound) in bounds.iter().enumerate().take(m) {
            row.extend([s.load[i], s.carried[i], s.delays[i], bound].map(|v| v.to_string()));
        }
        row.extend([s.agent_reward, s.optimal_reward, s.nr].map(|v| v.to_string()));
        for i in 0..m {
            row.extend(
                [
                    s.agent_action.b[i],
                    s.agent_action.p[i],
                    s.optimal_action.b[i],
                    s.optimal_action.p[i],
                ]
                .map(|v| v.to_string()),
            );
        }
        for j in 0..k {
            row.extend([s.cores[j], s.optimal_action.c[j]].map(|v| v.to_string()));
        }
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
pub struct SummaryRow {
    pub environment: &'static str,
    pub pattern: &'static str,
    pub steps: usize,
    pub anr: f64,
    pub ci: f64,
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = writer(path)?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
