use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::ObjectiveSpec;
use crate::protocol::NodeState;
use crate::simulator::{EventKind, Trace};

pub const METRICS_HEADER: [&str; 6] = ["k", "t", "f_avg_err", "spread", "l_gap", "stepsize_gap"];

/// One row of `metrics.csv`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub k: u64,
    pub t: f64,
    /// `(f(mean_i z_i) - f*) / n_s`.
    pub f_avg_err: f64,
    /// Largest coordinate spread `max_i z_i - min_i z_i`.
    pub spread: f64,
    pub l_gap: u64,
    /// `max_i - min_i` of the per-node stepsize sums.
    pub stepsize_gap: f64,
}

/// What the averaged error is measured against.
#[derive(Clone, Debug)]
pub struct MetricsContext {
    pub objectives: Vec<ObjectiveSpec>,
    pub f_star: f64,
    /// Instance count used for averaging (1 for analytic objectives).
    pub n_s: f64,
    /// Emit a row every `every` instants (plus the initial state at `k = 0`).
    pub every: u64,
}

impl MetricsContext {
    pub fn wants(&self, k: u64) -> bool {
        k.is_multiple_of(self.every.max(1))
    }

    pub fn row<'a>(
        &self,
        k: u64,
        t: f64,
        zs: impl Iterator<Item = &'a [f64]>,
        ls: impl Iterator<Item = u64>,
        sums: impl Iterator<Item = f64>,
    ) -> Result<MetricsRow> {
        let n = self.objectives.len() as f64;
        let dim = self.objectives.first().map_or(0, ObjectiveSpec::dim);
        let mut mean = vec![0.0; dim];
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for z in zs {
            for c in 0..dim {
                mean[c] += z[c];
                lo[c] = lo[c].min(z[c]);
                hi[c] = hi[c].max(z[c]);
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut f = 0.0;
        for o in &self.objectives {
            f += o.value(&mean)?;
        }
        let spread = hi.iter().zip(&lo).map(|(h, l)| h - l).fold(0.0, f64::max);
        let (mut lmin, mut lmax) = (u64::MAX, 0);
        for l in ls {
            lmin = lmin.min(l);
            lmax = lmax.max(l);
        }
        let (mut smin, mut smax) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in sums {
            smin = smin.min(s);
            smax = smax.max(s);
        }
        Ok(MetricsRow {
            k,
            t,
            f_avg_err: (f - self.f_star) / self.n_s,
            spread,
            l_gap: lmax.saturating_sub(lmin),
            stepsize_gap: smax - smin,
        })
    }

    /// Row for live node states.
    pub fn row_from_states(&self, k: u64, t: f64, states: &[NodeState]) -> Result<MetricsRow> {
        self.row(
            k,
            t,
            states.iter().map(|s| s.z.as_slice()),
            states.iter().map(|s| s.l),
            states.iter().map(|s| s.stepsize_sum),
        )
    }
}

/// Collects rows during a run; feed it from the simulator observer.
#[derive(Clone, Debug, Default)]
pub struct MetricsTracker {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTracker {
    pub fn observe(&mut self, ctx: &MetricsContext, k: u64, t: f64, states: &[NodeState]) -> Result<()> {
        if ctx.wants(k) {
            self.rows.push(ctx.row_from_states(k, t, states)?);
        }
        Ok(())
    }
}

/// Recomputes the metric rows of a run from its trace alone.
pub fn metrics_from_trace(trace: &Trace, ctx: &MetricsContext) -> Result<Vec<MetricsRow>> {
    let n = ctx.objectives.len();
    let mut z: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut l = vec![1u64; n];
    let mut sums = vec![0.0f64; n];
    let mut rows = Vec::new();
    let mut current: Option<(u64, f64)> = None;
    let emit = |k: u64, t: f64, z: &[Vec<f64>], l: &[u64], sums: &[f64], rows: &mut Vec<MetricsRow>| -> Result<()> {
        if ctx.wants(k) {
            rows.push(ctx.row(
                k,
                t,
                z.iter().map(Vec::as_slice),
                l.iter().copied(),
                sums.iter().copied(),
            )?);
        }
        Ok(())
    };
    for r in &trace.records {
        if r.node >= n {
            return Err(Error::Reconstruction(format!("trace names node {} of {n}", r.node)));
        }
        match r.kind {
            EventKind::Deliver => continue,
            EventKind::Init => {
                z[r.node] = r.z.clone().unwrap_or_default();
                l[r.node] = r.l_after.unwrap_or(1);
            }
            EventKind::Activate => {
                if let Some((k, t)) = current {
                    if k != r.k {
                        emit(k, t, &z, &l, &sums, &mut rows)?;
                    }
                } else {
                    emit(0, 0.0, &z, &l, &sums, &mut rows)?;
                }
                current = Some((r.k, r.t));
                if let Some(zi) = &r.z {
                    z[r.node].clone_from(zi);
                }
                l[r.node] = r.l_after.unwrap_or(l[r.node]);
                sums[r.node] += r.alpha.unwrap_or(0.0);
            }
        }
    }
    match current {
        Some((k, t)) => emit(k, t, &z, &l, &sums, &mut rows)?,
        None => emit(0, 0.0, &z, &l, &sums, &mut rows)?,
    }
    Ok(rows)
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(METRICS_HEADER)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a metrics file, rejecting any header other than the fixed one.
pub fn read_metrics_csv<R: Read>(reader: R) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != METRICS_HEADER {
        return Err(Error::Config {
            path: "metrics.csv".into(),
            message: format!("unexpected header {header:?}"),
        });
    }
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}
