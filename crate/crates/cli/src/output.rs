use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use exitperron_core::model::PointClass;
use exitperron_core::sim::TrajectoryBatch;
use exitperron_core::{ControlProblem, Grid, PolicyField, ValueField};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Where the problem came from, plus a SHA-256 of its source text.
#[derive(Debug, Clone, Serialize)]
pub struct ProblemEcho {
    pub source: String,
    pub sha256: String,
}

impl ProblemEcho {
    pub fn new(source: String, text: &str) -> Self {
        let digest = Sha256::digest(text.as_bytes());
        ProblemEcho { source, sha256: format!("{digest:x}") }
    }
}

/// Envelope shared by every JSON report.
#[derive(Debug, Serialize)]
pub struct Report<'a, C: Serialize, R: Serialize> {
    pub schema_version: u32,
    pub command: &'a str,
    pub problem: &'a ProblemEcho,
    pub seed: u64,
    pub config: &'a C,
    pub result: R,
}

pub fn out_path(dir: &Path, name: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    Ok(dir.join(name))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn class_name(c: PointClass) -> &'static str {
    match c {
        PointClass::Interior => "interior",
        PointClass::Boundary => "boundary",
        PointClass::Exterior => "exterior",
    }
}

fn coord_headers(d: usize, prefix: &str) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}{i}")).collect()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

/// Every node of the grid: coordinates, value, node class.
pub fn write_value_csv(path: &Path, field: &ValueField) -> Result<(), CliError> {
    let grid = field.grid();
    let mut w = csv_writer(path)?;
    let mut header = coord_headers(grid.dim(), "x");
    header.extend(["value".to_string(), "node_class".to_string()]);
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for node in 0..grid.len() {
        let mut row: Vec<String> = grid.coords(node).iter().map(|c| c.to_string()).collect();
        row.push(field.value(node).to_string());
        row.push(class_name(grid.class(node)).to_string());
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reads a field written by [`write_value_csv`] back onto `grid`, checking
/// that the node coordinates agree.
pub fn read_value_csv(path: &Path, grid: Arc<Grid>, p: &ControlProblem) -> Result<ValueField, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let d = grid.dim();
    let mut values = Vec::with_capacity(grid.len());
    for (node, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if node >= grid.len() {
            return Err(csv_err(path, format!("more rows than the {} grid nodes", grid.len())));
        }
        if rec.len() < d + 1 {
            return Err(csv_err(path, format!("row {} has {} columns", node + 1, rec.len())));
        }
        let num = |i: usize| -> Result<f64, CliError> {
            rec[i].trim().parse().map_err(|_| csv_err(path, format!("row {}: bad number `{}`", node + 1, &rec[i])))
        };
        let x = grid.coords(node);
        for (i, xi) in x.iter().enumerate() {
            let c = num(i)?;
            if (c - xi).abs() > 1e-9 * (1.0 + xi.abs()) {
                return Err(csv_err(path, format!("row {}: coordinate {c} does not match the grid ({xi})", node + 1)));
            }
        }
        values.push(num(d)?);
    }
    if values.len() != grid.len() {
        return Err(csv_err(path, format!("{} rows for {} grid nodes", values.len(), grid.len())));
    }
    Ok(ValueField::new(grid, values, false)?.with_boundary_check(p)?)
}

/// Non-exterior nodes with the selected action components.
pub fn write_policy_csv(path: &Path, policy: &PolicyField) -> Result<(), CliError> {
    let grid = policy.grid();
    let mut w = csv_writer(path)?;
    let mut header = coord_headers(grid.dim(), "x");
    header.extend(coord_headers(policy.control_set().dim(), "a"));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for node in 0..grid.len() {
        if grid.class(node) == PointClass::Exterior {
            continue;
        }
        let mut row: Vec<String> = grid.coords(node).iter().map(|c| c.to_string()).collect();
        row.extend(policy.action_at_node(node).iter().map(|a| a.to_string()));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Per-path summary of a batch.
pub fn write_batch_csv(path: &Path, batch: &TrajectoryBatch, beta: f64) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(["path_id", "t0", "exit_time", "censored", "discounted_running", "terminal_payoff"])
        .map_err(|e| csv_err(path, e))?;
    for rec in &batch.paths {
        let terminal = if rec.censored { 0.0 } else { (-beta * rec.exit_time).exp() * rec.terminal };
        let exit = if rec.censored { String::new() } else { rec.exit_time.to_string() };
        w.write_record([
            rec.path.to_string(),
            rec.t0.to_string(),
            exit,
            rec.censored.to_string(),
            rec.running.to_string(),
            terminal.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes `rows` under `header`.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// A gnuplot script: comma separator, a title, then `plot` (one or more
/// lines of gnuplot).
pub fn write_gnuplot(path: &Path, title: &str, plot: &str) -> Result<(), CliError> {
    let s = format!("set datafile separator ','\nset key off\nset title '{title}'\n{plot}\n");
    fs::write(path, s).map_err(|e| CliError::io(path, e))
}
