//! Executes experiment configs and lays out the per-run output directories.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{write_metrics_csv, MetricsContext, MetricsRow, MetricsTracker};
use crate::error::{Error, Result};
use crate::gensubgrad::{run_and_measure, write_series_csv};
use crate::simulator::run_observed;

use super::config::{ExperimentConfig, GenSpec, SimSpec};
use super::data::centralized_f_star;

/// Environment variable capping how many runs execute at once.
pub const THREADS_ENV: &str = "ASYSPA_LAB_THREADS";

/// Written next to every run as `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    /// `simulate` or `gensubgrad`.
    pub mode: String,
    /// Directory relative config paths resolve against.
    pub base_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<String>,
    pub nodes: usize,
    pub dim: usize,
    /// Final global index (simulate) or iteration count (gensubgrad).
    pub instants: u64,
    #[serde(default)]
    pub activations: u64,
    #[serde(default)]
    pub deliveries: u64,
    /// Simulated time; unitless, not wall-clock.
    #[serde(default)]
    pub final_time: f64,
    #[serde(default)]
    pub max_mass_error: f64,
    pub f_star: f64,
    pub n_s: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_metrics: Option<MetricsRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_f_err: Option<f64>,
    pub trace_recorded: bool,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub dir: PathBuf,
    pub summary: RunSummary,
    /// Metric rows (simulate runs only).
    pub rows: Vec<MetricsRow>,
}

/// Worker pool sized by [`THREADS_ENV`] (rayon's default when unset or 0).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| Error::Config {
            path: THREADS_ENV.into(),
            message: format!("expected a thread count, got {v:?}"),
        })?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::State(e.to_string()))
}

/// Output root of a config: `output_dir` (default `runs`) under `base`.
pub fn output_root(cfg: &ExperimentConfig, base: &Path) -> PathBuf {
    base.join(cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs")))
}

/// Runs every seed of `cfg`, writing `<root>/<name>/seed-<seed>/`. Relative
/// paths inside the config resolve against `base`.
pub fn run_experiment(cfg: &ExperimentConfig, base: &Path, root: &Path) -> Result<Vec<RunResult>> {
    let base = base.canonicalize().unwrap_or_else(|_| base.to_path_buf());
    let exp_dir = root.join(cfg.name());
    let pool = thread_pool()?;
    if let Some(sim) = &cfg.simulate {
        let first = *cfg.seeds.first().unwrap_or(&0);
        let (probe, built) = sim.sim_config(&base, first)?;
        let f_star = match (sim.f_star, &built.optimum) {
            (Some(f), _) => f,
            (None, Some(o)) => o.f_star,
            (None, None) => {
                let iters = sim.f_star_iterations.unwrap_or(sim.max_events.saturating_mul(10));
                centralized_f_star(&probe.objectives, iters)?
            }
        };
        pool.install(|| {
            cfg.seeds
                .par_iter()
                .map(|&seed| simulate_one(cfg, sim, &base, &exp_dir, seed, f_star, built.n_s))
                .collect()
        })
    } else if let Some(gen) = &cfg.gensubgrad {
        pool.install(|| {
            cfg.seeds
                .par_iter()
                .map(|&seed| gensubgrad_one(cfg, gen, &base, &exp_dir, seed))
                .collect()
        })
    } else {
        Err(Error::Config { path: "simulate".into(), message: "nothing to run".into() })
    }
}

fn seed_dir(exp_dir: &Path, seed: u64) -> Result<PathBuf> {
    let dir = exp_dir.join(format!("seed-{seed}"));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

fn single_seed(cfg: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    ExperimentConfig { seeds: vec![seed], ..cfg.clone() }
}

fn simulate_one(
    cfg: &ExperimentConfig,
    sim: &SimSpec,
    base: &Path,
    exp_dir: &Path,
    seed: u64,
    f_star: f64,
    n_s: usize,
) -> Result<RunResult> {
    let (sc, _) = sim.sim_config(base, seed)?;
    let ctx = MetricsContext {
        objectives: sc.objectives.clone(),
        f_star,
        n_s: n_s as f64,
        every: sim.metrics_every,
    };
    let mut tracker = MetricsTracker::default();
    let out = run_observed(&sc, &mut |s| tracker.observe(&ctx, s.k, s.t, s.states))?;

    let dir = seed_dir(exp_dir, seed)?;
    if sc.trace.record {
        out.trace.write_jsonl(fs::File::create(dir.join("trace.jsonl"))?)?;
    }
    write_metrics_csv(&tracker.rows, BufWriter::new(fs::File::create(dir.join("metrics.csv"))?))?;
    let summary = RunSummary {
        name: cfg.name(),
        seed,
        mode: "simulate".into(),
        base_dir: base.to_path_buf(),
        algorithm: Some(sc.algorithm.name().into()),
        nodes: sc.graph.node_count(),
        dim: sc.dim(),
        instants: out.instants,
        activations: out.activations,
        deliveries: out.deliveries,
        final_time: out.final_time,
        max_mass_error: out.max_mass_error,
        f_star,
        n_s,
        b: Some(out.bounds.b),
        final_metrics: tracker.rows.last().copied(),
        final_f_err: None,
        trace_recorded: sc.trace.record,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    write_json(&dir.join("config.json"), &single_seed(cfg, seed))?;
    Ok(RunResult { dir, summary, rows: tracker.rows })
}

fn gensubgrad_one(cfg: &ExperimentConfig, gen: &GenSpec, base: &Path, exp_dir: &Path, seed: u64) -> Result<RunResult> {
    let n = gen.components();
    let built = gen.objective.build(n, base)?;
    let sched = gen.schedule(n);
    let rho = gen.stepsize.build()?;
    let run = run_and_measure(
        gen.x0.clone(),
        gen.steps,
        &sched,
        &rho,
        &built.parts,
        built.optimum.as_ref(),
        gen.record_every,
    )?;
    let dir = seed_dir(exp_dir, seed)?;
    write_series_csv(&run, BufWriter::new(fs::File::create(dir.join("series.csv"))?))?;
    let summary = RunSummary {
        name: cfg.name(),
        seed,
        mode: "gensubgrad".into(),
        base_dir: base.to_path_buf(),
        algorithm: None,
        nodes: n,
        dim: gen.x0.len(),
        instants: gen.steps,
        activations: 0,
        deliveries: 0,
        final_time: 0.0,
        max_mass_error: 0.0,
        f_star: built.optimum.as_ref().map_or(0.0, |o| o.f_star),
        n_s: built.n_s,
        b: None,
        final_metrics: None,
        final_f_err: run.series.last().map(|p| p.f_err),
        trace_recorded: false,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    write_json(&dir.join("config.json"), &single_seed(cfg, seed))?;
    Ok(RunResult { dir, summary, rows: Vec::new() })
}
