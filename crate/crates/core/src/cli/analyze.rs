//! Post-hoc checks of a simulate run directory.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use serde::Serialize;

use crate::analysis::{
    audit_asynchrony, audit_stepsize_balance, consensus_series, metrics_from_trace, read_metrics_csv,
    reconstruct_augmented, update_rates, AsynchronyAudit, BalanceAudit, GraphConstants, MetricsContext,
};
use crate::error::{Error, Result};
use crate::protocol::Algorithm;
use crate::simulator::Trace;

use super::config::ExperimentConfig;
use super::run::RunSummary;

#[derive(Clone, Debug)]
pub struct AnalyzeOptions {
    /// Relay slots of the augmented system (the run's `b` when absent).
    pub slots: Option<usize>,
    /// Only the first `max_instants` instants are replayed.
    pub max_instants: u64,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self { slots: None, max_instants: 20_000 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct AnalysisReport {
    pub instants_replayed: u64,
    pub slots: usize,
    pub max_residual: f64,
    pub max_column_error: f64,
    pub max_mass_error: f64,
    pub metrics_roundtrip_error: f64,
    pub asynchrony: AsynchronyAudit,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub balance: Option<BalanceAudit>,
    pub update_rates: Vec<f64>,
    pub final_consensus_deviation: f64,
    pub checks: Vec<Check>,
    pub pass: bool,
}

fn check(name: &'static str, value: f64, limit: f64) -> Check {
    Check { name, value, limit, pass: value <= limit }
}

/// Keeps the events of the first `instants` activation instants.
fn truncate(trace: &Trace, instants: u64) -> Trace {
    Trace { records: trace.records.iter().filter(|r| r.k <= instants).cloned().collect() }
}

/// Replays and audits the run in `dir`, writing `analysis.json` and
/// `consensus.csv` there.
pub fn analyze_run(dir: &Path, opts: &AnalyzeOptions) -> Result<AnalysisReport> {
    let summary: RunSummary = serde_json::from_slice(&fs::read(dir.join("summary.json"))?)?;
    let cfg = ExperimentConfig::load(&dir.join("config.json"))?;
    let sim = cfg.simulate.as_ref().ok_or_else(|| Error::Config {
        path: dir.display().to_string(),
        message: "analyze needs a simulate run".into(),
    })?;
    if !summary.trace_recorded {
        return Err(Error::Config { path: "simulate.trace.record".into(), message: "run has no trace".into() });
    }
    let (sc, _) = sim.sim_config(&summary.base_dir, summary.seed)?;
    let n = sc.graph.node_count();
    let bounds = sc.bounds()?;
    let sched = sc.stepsize.build()?;
    let trace = Trace::read_jsonl(fs::File::open(dir.join("trace.jsonl"))?)?;
    if !sc.trace.deliveries {
        return Err(Error::Config {
            path: "simulate.trace.deliveries".into(),
            message: "replay needs delivery records".into(),
        });
    }

    let head = truncate(&trace, opts.max_instants);
    let slots = opts.slots.unwrap_or(bounds.b);
    let sys = reconstruct_augmented(&head, &sc.graph, &sc.objectives, &sched, slots)?;
    let asynchrony = audit_asynchrony(&trace, &bounds)?;
    let balance = match sc.algorithm {
        Algorithm::Naive => None,
        _ => Some(audit_stepsize_balance(&trace, &sched, n, bounds.nb())?),
    };

    let ctx = MetricsContext {
        objectives: sc.objectives.clone(),
        f_star: summary.f_star,
        n_s: summary.n_s as f64,
        every: sim.metrics_every,
    };
    let replayed = metrics_from_trace(&trace, &ctx)?;
    let stored = read_metrics_csv(fs::File::open(dir.join("metrics.csv"))?)?;
    let roundtrip = if replayed.len() != stored.len() {
        f64::INFINITY
    } else {
        replayed
            .iter()
            .zip(&stored)
            .map(|(a, b)| {
                if a.k != b.k || a.l_gap != b.l_gap {
                    return f64::INFINITY;
                }
                [a.t - b.t, a.f_avg_err - b.f_avg_err, a.spread - b.spread, a.stepsize_gap - b.stepsize_gap]
                    .iter()
                    .fold(0.0f64, |m, d| m.max(d.abs()))
            })
            .fold(0.0, f64::max)
    };

    let consts = GraphConstants::new(n, bounds.b.max(1))?;
    let series = consensus_series(&sys, Some(&consts));
    let mut w = csv::Writer::from_writer(BufWriter::new(fs::File::create(dir.join("consensus.csv"))?));
    w.write_record(["k", "deviation", "spread", "bound"])?;
    let mut bound_excess = 0.0f64;
    for p in &series {
        let bound = p.bound.unwrap_or(f64::INFINITY);
        bound_excess = bound_excess.max(p.deviation - bound);
        w.write_record([p.k.to_string(), p.deviation.to_string(), p.spread.to_string(), bound.to_string()])?;
    }
    w.flush()?;

    let mut checks = vec![
        check("replay_residual", sys.max_residual, 1e-9),
        check("column_sum_error", sys.max_column_error, 1e-12),
        check("mass_error", sys.max_mass_error, 1e-9),
        check("asynchrony_violations", asynchrony.violations() as f64, 0.0),
        check("metrics_roundtrip", roundtrip, 1e-9),
    ];
    if slots >= bounds.b {
        checks.push(check("consensus_bound_excess", bound_excess.max(0.0), 0.0));
    }
    if let Some(b) = &balance {
        checks.push(check("stepsize_balance_violations", b.violations as f64, 0.0));
    }
    let pass = checks.iter().all(|c| c.pass);
    let report = AnalysisReport {
        instants_replayed: sys.last_k(),
        slots,
        max_residual: sys.max_residual,
        max_column_error: sys.max_column_error,
        max_mass_error: sys.max_mass_error,
        metrics_roundtrip_error: roundtrip,
        asynchrony,
        balance,
        update_rates: update_rates(&trace, n),
        final_consensus_deviation: series.last().map_or(0.0, |p| p.deviation),
        checks,
        pass,
    };
    let mut bytes = serde_json::to_vec_pretty(&report)?;
    bytes.push(b'\n');
    fs::write(dir.join("analysis.json"), bytes)?;
    Ok(report)
}
