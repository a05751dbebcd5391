//! Replay of a trace through the synchronous, delay-free augmented system
//! `x~(k+1) = A~(k) x~(k) - g(k)` on `n (slots + 1)` nodes.
//!
//! Layout: index `n*u + i` is the `u`-th relay of node `i` (`u = 0` is the
//! real node). Semantics reconstructed from the trace:
//!
//! - a real node activated at instant `k-1` (all nodes at `k = 1`, for the
//!   initial broadcast) dispatches its state through column `i` of `A~(k)`;
//!   the copy addressed to `v` and consumed at instant `q` lands in row
//!   `n*(q-k) + v` with weight `1/|N_out(i)|`. Otherwise the column is the identity;
//! - relay `n*u + j` (`u >= 1`) forwards everything to `n*(u-1) + j`;
//! - real row `i` of `x~(k+1)` holds the `x` computed at instant `k` if `i`
//!   activated then, and 0 otherwise;
//! - `g_i(k) = (sum_{t=l_i(k)}^{l_i(k+1)-1} rho(t)) grad f_i(z_i)` for the nodes activated at `k`.
//!
//! Under these rules every column of `A~(k)` sums to one and the replay is
//! exact up to rounding.

use crate::error::{Error, Result};
use crate::graph::{Digraph, NodeId};
use crate::objective::ObjectiveSpec;
use crate::simulator::{EventKind, Trace};
use crate::stepsize::StepsizeSchedule;

/// One message recovered from a trace.
#[derive(Clone, Debug, PartialEq)]
pub struct SentMessage {
    pub id: u64,
    pub src: NodeId,
    pub dst: Option<NodeId>,
    /// Instant at which it was sent (0 for the initial broadcast).
    pub sent: u64,
    /// Instant at which the receiver consumed it.
    pub consumed: Option<u64>,
    pub x: Vec<f64>,
    pub y: f64,
}

/// What happened to every message of a trace.
#[derive(Clone, Debug, Default)]
pub struct MessageLog {
    pub messages: Vec<SentMessage>,
    /// Activations grouped by instant (index 0 stays empty).
    pub activations: Vec<Vec<Activation>>,
    pub x0: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Activation {
    pub node: NodeId,
    pub l_before: u64,
    pub l_after: u64,
    pub alpha: f64,
    pub x: Vec<f64>,
    pub y: f64,
    pub z: Vec<f64>,
    pub sent: Vec<u64>,
}

fn missing(field: &str, k: u64, node: NodeId) -> Error {
    Error::Reconstruction(format!("record at instant {k} for node {node} lacks `{field}`"))
}

impl MessageLog {
    /// Walks the trace once, matching sends, deliveries and consumptions.
    pub fn from_trace(trace: &Trace, n: usize) -> Result<Self> {
        let instants = trace.instants() as usize;
        let mut log = MessageLog {
            messages: Vec::new(),
            activations: vec![Vec::new(); instants + 1],
            x0: vec![Vec::new(); n],
        };
        let mut pending: Vec<Vec<u64>> = vec![Vec::new(); n];
        let mut delivered_any = false;
        for rec in &trace.records {
            if rec.node >= n {
                return Err(Error::Reconstruction(format!("record names node {} of {n}", rec.node)));
            }
            match rec.kind {
                EventKind::Deliver => {
                    delivered_any = true;
                    let id = *rec.msgs.first().ok_or_else(|| missing("msgs", rec.k, rec.node))?;
                    let msg = log.messages.get_mut(id as usize).ok_or_else(|| {
                        Error::Reconstruction(format!("message {id} delivered before it was sent"))
                    })?;
                    if msg.dst.is_some() {
                        return Err(Error::Reconstruction(format!("message {id} delivered twice")));
                    }
                    msg.dst = Some(rec.node);
                    pending[rec.node].push(id);
                }
                EventKind::Init | EventKind::Activate => {
                    let x = rec.x.clone().ok_or_else(|| missing("x", rec.k, rec.node))?;
                    let y = rec.y.ok_or_else(|| missing("y", rec.k, rec.node))?;
                    if rec.kind == EventKind::Activate {
                        let ids = std::mem::take(&mut pending[rec.node]);
                        if let Some(c) = rec.consumed {
                            if c != ids.len() {
                                return Err(Error::Reconstruction(format!(
                                    "node {} at instant {} consumed {c} triples but {} were delivered",
                                    rec.node,
                                    rec.k,
                                    ids.len()
                                )));
                            }
                        }
                        if ids.is_empty() || rec.msgs.is_empty() {
                            return Err(Error::Reconstruction(format!(
                                "node {} activated at instant {} without updating",
                                rec.node, rec.k
                            )));
                        }
                        for id in ids {
                            log.messages[id as usize].consumed = Some(rec.k);
                        }
                        log.activations[rec.k as usize].push(Activation {
                            node: rec.node,
                            l_before: rec.l_before.ok_or_else(|| missing("l_before", rec.k, rec.node))?,
                            l_after: rec.l_after.ok_or_else(|| missing("l_after", rec.k, rec.node))?,
                            alpha: rec.alpha.unwrap_or(0.0),
                            x: x.clone(),
                            y,
                            z: rec.z.clone().ok_or_else(|| missing("z", rec.k, rec.node))?,
                            sent: rec.msgs.clone(),
                        });
                    } else {
                        log.x0[rec.node] = x.clone();
                    }
                    let deg = rec.msgs.len() as f64;
                    for &id in &rec.msgs {
                        if id as usize != log.messages.len() {
                            return Err(Error::Reconstruction(format!(
                                "message ids out of order at {id}"
                            )));
                        }
                        log.messages.push(SentMessage {
                            id,
                            src: rec.node,
                            dst: None,
                            sent: rec.k,
                            consumed: None,
                            x: x.iter().map(|v| v / deg).collect(),
                            y: y / deg,
                        });
                    }
                }
            }
        }
        if !delivered_any && !log.messages.is_empty() {
            return Err(Error::Reconstruction(
                "trace has no delivery records; rerun with deliveries traced".into(),
            ));
        }
        if log.x0.iter().any(Vec::is_empty) {
            return Err(Error::Reconstruction("trace lacks init records".into()));
        }
        Ok(log)
    }

    /// Largest instant `K` such that every message sent before `K` was consumed.
    pub fn complete_until(&self) -> u64 {
        let last = self.activations.len() as u64 - 1;
        self.messages
            .iter()
            .filter(|m| m.consumed.is_none())
            .map(|m| m.sent)
            .min()
            .map_or(last, |p| p.min(last))
    }
}

/// Sparse column-stochastic matrix stored by columns of `(row, value)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseColumns {
    pub dim: usize,
    pub cols: Vec<Vec<(usize, f64)>>,
}

impl SparseColumns {
    pub fn column_sums(&self) -> impl Iterator<Item = f64> + '_ {
        self.cols.iter().map(|c| c.iter().map(|e| e.1).sum())
    }

    /// `A v` for `v` stored row-major with `width` entries per row.
    pub fn apply(&self, v: &[f64], width: usize) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (c, col) in self.cols.iter().enumerate() {
            let src = &v[c * width..(c + 1) * width];
            if src.iter().all(|&s| s == 0.0) {
                continue;
            }
            for &(r, a) in col {
                for (o, s) in out[r * width..(r + 1) * width].iter_mut().zip(src) {
                    *o += a * s;
                }
            }
        }
        out
    }

    /// `A M` for a dense square `M`.
    pub fn left_mul(&self, m: &Dense) -> Dense {
        let d = self.dim;
        let mut out = Dense::zeros(d);
        for (c, col) in self.cols.iter().enumerate() {
            for &(r, a) in col {
                for j in 0..d {
                    out.data[r * d + j] += a * m.data[c * d + j];
                }
            }
        }
        out
    }

    /// `M A` for a dense square `M`.
    pub fn right_mul(&self, m: &Dense) -> Dense {
        let d = self.dim;
        let mut out = Dense::zeros(d);
        for (c, col) in self.cols.iter().enumerate() {
            for &(r, a) in col {
                for i in 0..d {
                    out.data[i * d + c] += a * m.data[i * d + r];
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Dense {
        let mut m = Dense::zeros(self.dim);
        for (c, col) in self.cols.iter().enumerate() {
            for &(r, a) in col {
                m.data[r * self.dim + c] += a;
            }
        }
        m
    }
}

/// Dense square matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.len();
        Self { dim, data: rows.iter().flatten().copied().collect() }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Mean of the columns.
    pub fn column_mean(&self) -> Vec<f64> {
        let d = self.dim as f64;
        (0..self.dim)
            .map(|i| self.data[i * self.dim..(i + 1) * self.dim].iter().sum::<f64>() / d)
            .collect()
    }

    /// Induced 1-norm of `self - phi 1^T` (largest column abs sum).
    pub fn rank_one_deviation(&self, phi: &[f64]) -> f64 {
        (0..self.dim)
            .map(|j| (0..self.dim).map(|i| (self.get(i, j) - phi[i]).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// One reconstructed step `k`.
#[derive(Clone, Debug)]
pub struct AugmentedStep {
    pub k: u64,
    pub a: SparseColumns,
    /// Nonzero rows of `g(k)` (all real nodes).
    pub g: Vec<(NodeId, Vec<f64>)>,
    pub activated: Vec<NodeId>,
    /// `||x~(k+1) - (A~(k) x~(k) - g(k))||_inf`, the same for `y~` folded in.
    pub residual: f64,
    /// Residual under the shifted window `l_i(k)+1 ..= l_i(k+1)`.
    pub shifted_residual: f64,
}

#[derive(Clone, Debug)]
pub struct AugmentedSystem {
    pub n: usize,
    pub slots: usize,
    pub dim: usize,
    /// `x~(k)` for `k = 1..=steps.len()+1`, row-major `n~ x dim`.
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub steps: Vec<AugmentedStep>,
    /// Held estimate `z_i(k+1)` after every instant `k`, index `k-1`.
    pub z_held: Vec<Vec<Vec<f64>>>,
    pub max_residual: f64,
    pub max_shifted_residual: f64,
    /// Largest `|column sum - 1|` over all `A~(k)`.
    pub max_column_error: f64,
    /// Largest `|1^T y~(k) - n|`.
    pub max_mass_error: f64,
}

impl AugmentedSystem {
    pub fn size(&self) -> usize {
        self.n * (self.slots + 1)
    }

    /// Last reconstructed instant.
    pub fn last_k(&self) -> u64 {
        self.steps.len() as u64
    }

    pub fn step(&self, k: u64) -> Result<&AugmentedStep> {
        if k == 0 || k > self.last_k() {
            return Err(Error::param(format!("instant {k} outside 1..={}", self.last_k())));
        }
        Ok(&self.steps[k as usize - 1])
    }

    pub fn x_at(&self, k: u64) -> &[f64] {
        &self.x[k as usize - 1]
    }

    /// `x_bar(k) = 1^T x~(k) / n`.
    pub fn x_bar(&self, k: u64) -> Vec<f64> {
        let x = self.x_at(k);
        let mut acc = vec![0.0; self.dim];
        for row in x.chunks(self.dim) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        acc.iter().map(|a| a / self.n as f64).collect()
    }
}

/// Rebuilds `A~(k)`, `g(k)`, `x~(k)`, `y~(k)` from a trace and measures the
/// replay residual. Only instants up to the last one whose messages were all
/// consumed are reconstructed.
pub fn reconstruct_augmented(
    trace: &Trace,
    graph: &Digraph,
    objs: &[ObjectiveSpec],
    sched: &StepsizeSchedule,
    slots: usize,
) -> Result<AugmentedSystem> {
    let n = graph.node_count();
    if objs.len() != n {
        return Err(Error::param("one objective per node required"));
    }
    let log = MessageLog::from_trace(trace, n)?;
    let dim = log.x0[0].len();
    let last = log.complete_until();
    let size = n * (slots + 1);

    for m in &log.messages {
        let Some(q) = m.consumed else { continue };
        if m.dst.is_some_and(|d| !graph.has_edge(m.src, d) && d != m.src) {
            return Err(Error::Reconstruction(format!("message {} travelled a missing edge", m.id)));
        }
        let relay = q - m.sent - 1;
        if relay as usize > slots {
            return Err(Error::Reconstruction(format!(
                "message {} from node {} sent at instant {} was consumed at {q}, needing {relay} relays but only {slots} exist",
                m.id, m.src, m.sent
            )));
        }
    }

    // x~(k), y~(k) straight from their definitions.
    let frames = last as usize + 1;
    let mut xs = vec![vec![0.0; size * dim]; frames];
    let mut ys = vec![vec![0.0; size]; frames];
    for i in 0..n {
        xs[0][i * dim..(i + 1) * dim].copy_from_slice(&log.x0[i]);
        ys[0][i] = 1.0;
    }
    for k in 1..frames {
        for act in &log.activations[k] {
            xs[k][act.node * dim..(act.node + 1) * dim].copy_from_slice(&act.x);
            ys[k][act.node] = act.y;
        }
    }
    for m in &log.messages {
        let (Some(q), Some(dst)) = (m.consumed, m.dst) else { continue };
        // Present in x~(k) for k in sent+2..=q at relay q-k+1.
        for k in m.sent + 2..=q.min(frames as u64) {
            let row = n * (q - k + 1) as usize + dst;
            let frame = k as usize - 1;
            for (a, v) in xs[frame][row * dim..(row + 1) * dim].iter_mut().zip(&m.x) {
                *a += v;
            }
            ys[frame][row] += m.y;
        }
    }

    let mut by_sent: Vec<Vec<usize>> = vec![Vec::new(); log.activations.len()];
    for (idx, m) in log.messages.iter().enumerate() {
        by_sent[m.sent as usize].push(idx);
    }

    let mut steps = Vec::with_capacity(last as usize);
    let mut z_held: Vec<Vec<Vec<f64>>> = Vec::with_capacity(last as usize);
    let mut held = log.x0.clone();
    let mut max_residual = 0.0f64;
    let mut max_shifted = 0.0f64;
    let mut max_col = 0.0f64;
    let mut max_mass = 0.0f64;
    for k in 1..=last {
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); size];
        let dispatching: Vec<bool> = if k == 1 {
            vec![true; n]
        } else {
            let mut d = vec![false; n];
            for act in &log.activations[k as usize - 1] {
                d[act.node] = true;
            }
            d
        };
        for (i, col) in cols.iter_mut().enumerate().take(n) {
            if !dispatching[i] {
                col.push((i, 1.0));
            }
        }
        for m in by_sent[k as usize - 1].iter().map(|&idx| &log.messages[idx]) {
            let (Some(q), Some(dst)) = (m.consumed, m.dst) else {
                return Err(Error::Reconstruction(format!("message {} was never consumed", m.id)));
            };
            let deg = graph.out_degree(m.src) as f64;
            cols[m.src].push((n * (q - k) as usize + dst, 1.0 / deg));
        }
        for u in 1..=slots {
            for j in 0..n {
                cols[n * u + j].push((n * (u - 1) + j, 1.0));
            }
        }
        let a = SparseColumns { dim: size, cols };
        for s in a.column_sums() {
            max_col = max_col.max((s - 1.0).abs());
        }

        let frame = k as usize - 1;
        let ax = a.apply(&xs[frame], dim);
        let ay = a.apply(&ys[frame], 1);
        let mut predicted = ax.clone();
        let mut shifted = ax.clone();
        let mut g = Vec::new();
        let mut activated = Vec::new();
        let mut z_gap = 0.0f64;
        for act in &log.activations[k as usize] {
            let i = act.node;
            activated.push(i);
            let yi = ay[i];
            if !(yi > 0.0) {
                return Err(Error::Reconstruction(format!(
                    "augmented weight of node {i} at instant {k} is {yi}"
                )));
            }
            // The subgradient is taken at the node's own z: at a kink the
            // replayed z can differ in the last bit and flip the sign.
            for (v, zr) in ax[i * dim..(i + 1) * dim].iter().zip(&act.z) {
                z_gap = z_gap.max((v / yi - zr).abs());
            }
            let grad = objs[i].subgradient(&act.z)?;
            let alpha = sched.window_sum(act.l_before, act.l_after.saturating_sub(1))?;
            let alpha_shift = sched.window_sum(act.l_before + 1, act.l_after)?;
            let gi: Vec<f64> = grad.iter().map(|v| alpha * v).collect();
            for (c, gv) in gi.iter().enumerate() {
                predicted[i * dim + c] -= gv;
                shifted[i * dim + c] -= alpha_shift * grad[c];
            }
            g.push((i, gi));
            held[i].clone_from(&act.z);
        }
        z_held.push(held.clone());

        let next = &xs[frame + 1];
        let mut res = z_gap;
        let mut res_shift = z_gap;
        for ((p, s), t) in predicted.iter().zip(&shifted).zip(next) {
            res = res.max((p - t).abs());
            res_shift = res_shift.max((s - t).abs());
        }
        for (p, t) in ay.iter().zip(&ys[frame + 1]) {
            res = res.max((p - t).abs());
            res_shift = res_shift.max((p - t).abs());
        }
        max_residual = max_residual.max(res);
        max_shifted = max_shifted.max(res_shift);
        steps.push(AugmentedStep { k, a, g, activated, residual: res, shifted_residual: res_shift });
    }
    for y in &ys {
        max_mass = max_mass.max((y.iter().sum::<f64>() - n as f64).abs());
    }

    Ok(AugmentedSystem {
        n,
        slots,
        dim,
        x: xs,
        y: ys,
        steps,
        z_held,
        max_residual,
        max_shifted_residual: max_shifted,
        max_column_error: max_col,
        max_mass_error: max_mass,
    })
}
