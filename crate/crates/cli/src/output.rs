use std::path::{Path, PathBuf};

use serde_json::json;

use crate::config::{Config, Scenario};
use crate::scenarios::{Outcome, Table};
use crate::Failure;

fn io(e: impl std::fmt::Display) -> Failure {
    Failure::Io(e.to_string())
}

/// Scientific notation with a fixed mantissa width, so equal inputs give
/// equal bytes.
pub fn fmt(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x == 0.0 {
        // no signed zeros in the tables
        format!("{:.12e}", 0.0)
    } else {
        format!("{x:.12e}")
    }
}

pub fn write_csv(path: &Path, t: &Table) -> Result<(), Failure> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path).map_err(io)?;
    w.write_record(t.columns.iter().map(|(n, u)| format!("{n} [{u}]"))).map_err(io)?;
    for row in &t.rows {
        w.write_record(row.iter().map(|&x| fmt(x))).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write(dir: &Path, cfg: &Config, scenario: Scenario, out: &Outcome) -> Result<Vec<PathBuf>, Failure> {
    std::fs::create_dir_all(dir).map_err(io)?;
    let csv_path = dir.join(cfg.output.csv.clone().unwrap_or_else(|| format!("{}.csv", scenario.name())));
    let json_path = dir.join(cfg.output.summary.clone().unwrap_or_else(|| format!("{}.json", scenario.name())));
    write_csv(&csv_path, &out.table)?;
    let summary = json!({
        "tool": "simulate",
        "version": env!("CARGO_PKG_VERSION"),
        "core_version": spinmem::VERSION,
        "scenario": scenario.name(),
        "config": cfg,
        "csv": csv_path.file_name().map(|s| s.to_string_lossy()),
        "rows": out.table.rows.len(),
        "report": out.report,
    });
    let mut text = serde_json::to_string_pretty(&summary).map_err(io)?;
    text.push('\n');
    std::fs::write(&json_path, text).map_err(io)?;
    Ok(vec![csv_path, json_path])
}
