//! Time-to-threshold comparison and speedup table.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::{read_metrics_csv, MetricsRow};
use crate::error::{Error, Result};

use super::config::ExperimentConfig;
use super::run::{output_root, run_experiment, RunSummary};

/// One line of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareEntry {
    pub label: String,
    pub algorithm: Option<String>,
    pub nodes: usize,
    /// Simulated time of the first metrics row with `f_avg_err <= threshold`.
    pub time_to_threshold: Option<f64>,
    /// `T_first / T_this`; absent when either run never reached the threshold.
    pub speedup: Option<f64>,
    pub reached: bool,
}

/// First simulated time at which `f_avg_err` drops to `threshold`.
pub fn time_to_threshold(rows: &[MetricsRow], threshold: f64) -> Option<f64> {
    rows.iter().find(|r| r.f_avg_err <= threshold).map(|r| r.t)
}

/// Speedups relative to the first entry of `times`.
pub fn speedups(times: &[Option<f64>]) -> Vec<Option<f64>> {
    let first = times.first().copied().flatten();
    times
        .iter()
        .map(|t| match (first, *t) {
            (Some(f), Some(t)) if t > 0.0 => Some(f / t),
            (Some(_), Some(_)) => Some(f64::INFINITY),
            _ => None,
        })
        .collect()
}

/// Metrics of a completed run directory, or of the first seed of a config
/// (run on the spot).
fn load_input(input: &Path) -> Result<(String, RunSummary, Vec<MetricsRow>)> {
    if input.is_dir() {
        let summary: RunSummary = serde_json::from_slice(&fs::read(input.join("summary.json"))?)?;
        if summary.mode != "simulate" {
            return Err(Error::Config {
                path: input.display().to_string(),
                message: "only simulate runs carry time-stamped metrics".into(),
            });
        }
        let rows = read_metrics_csv(fs::File::open(input.join("metrics.csv"))?)?;
        return Ok((input.display().to_string(), summary, rows));
    }
    let mut cfg = ExperimentConfig::load(input)?;
    if cfg.simulate.is_none() {
        return Err(Error::Config {
            path: input.display().to_string(),
            message: "compare needs simulate configs".into(),
        });
    }
    cfg.seeds.truncate(1);
    let base = input.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let root = output_root(&cfg, base);
    let mut results = run_experiment(&cfg, base, &root)?;
    let r = results.remove(0);
    Ok((cfg.name(), r.summary, r.rows))
}

pub fn compare(inputs: &[PathBuf], threshold: f64) -> Result<Vec<CompareEntry>> {
    if inputs.len() < 2 {
        return Err(Error::Config { path: "inputs".into(), message: "compare needs at least two runs".into() });
    }
    let mut loaded = Vec::new();
    for input in inputs {
        loaded.push(load_input(input)?);
    }
    let times: Vec<Option<f64>> = loaded.iter().map(|(_, _, rows)| time_to_threshold(rows, threshold)).collect();
    let ratios = speedups(&times);
    Ok(loaded
        .into_iter()
        .zip(times)
        .zip(ratios)
        .map(|(((label, summary, _), t), speedup)| CompareEntry {
            label,
            algorithm: summary.algorithm,
            nodes: summary.nodes,
            time_to_threshold: t,
            speedup,
            reached: t.is_some(),
        })
        .collect())
}

/// Plain-text table; unreached thresholds print as `∞` with a `not reached` flag.
pub fn render_table(entries: &[CompareEntry], threshold: f64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "threshold f_avg_err <= {threshold:e} (simulated time)");
    let _ = writeln!(out, "{:<32} {:>9} {:>6} {:>14} {:>9}", "run", "algorithm", "nodes", "T", "speedup");
    for e in entries {
        let t = e.time_to_threshold.map_or("∞".to_string(), |t| format!("{t:.6}"));
        let s = e.speedup.map_or("-".to_string(), |s| format!("{s:.3}"));
        let flag = if e.reached { "" } else { "  not reached" };
        let _ = writeln!(
            out,
            "{:<32} {:>9} {:>6} {:>14} {:>9}{flag}",
            e.label,
            e.algorithm.as_deref().unwrap_or("-"),
            e.nodes,
            t,
            s
        );
    }
    out
}
