//! Node-local state machines for the three push-sum variants.
//!
//! A node keeps its push-sum numerator `x`, weight `y`, estimate `z = w / y`
//! and the stepsize frontier `l`. Incoming triples accumulate in buffers until
//! the node activates; an activation consumes every buffered triple, applies a
//! subgradient step and returns the share that is broadcast to each member of
//! `N_out` (the node included).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Digraph, NodeId};
use crate::objective::ObjectiveSpec;
use crate::stepsize::StepsizeSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Asynchronous subgradient-push with adaptive stepsize windows.
    Asyspa,
    /// Asynchronous push-sum indexing `rho` by the local update count.
    Naive,
    /// Lock-step synchronous subgradient-push.
    Synspa,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Asyspa => "asyspa",
            Algorithm::Naive => "naive",
            Algorithm::Synspa => "synspa",
        }
    }
}

/// Payload broadcast by one activation: `(x / |N_out|, y / |N_out|, l)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Share {
    pub x: Vec<f64>,
    pub y: f64,
    pub l: u64,
}

/// One addressed copy of a [`Share`] in flight. Times are engine ticks.
#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub id: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub share: Share,
    pub send_time: u64,
    pub deliver_time: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeState {
    pub id: NodeId,
    pub x: Vec<f64>,
    pub y: f64,
    pub z: Vec<f64>,
    /// Stepsize frontier. The naive variant uses it as its local update counter.
    pub l: u64,
    /// Completed updates.
    pub updates: u64,
    /// Sum of every stepsize this node has applied.
    pub stepsize_sum: f64,
    x_buf: Vec<Vec<f64>>,
    y_buf: Vec<f64>,
    l_buf: Vec<u64>,
}

/// Outcome of one activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Update {
    pub alpha: f64,
    pub l_before: u64,
    pub l_after: u64,
    /// Number of buffered triples consumed.
    pub consumed: usize,
    /// Per-neighbor share to broadcast.
    pub share: Share,
}

impl NodeState {
    /// Initial state: `y = 1`, `l = 1`, `z = x0`, empty buffers.
    pub fn new(id: NodeId, x0: Vec<f64>) -> Self {
        Self {
            id,
            z: x0.clone(),
            x: x0,
            y: 1.0,
            l: 1,
            updates: 0,
            stepsize_sum: 0.0,
            x_buf: Vec::new(),
            y_buf: Vec::new(),
            l_buf: Vec::new(),
        }
    }

    /// The share broadcast right after initialization.
    pub fn initial_share(&self, out_degree: usize) -> Share {
        self.share(out_degree)
    }

    fn share(&self, out_degree: usize) -> Share {
        let d = out_degree as f64;
        Share {
            x: self.x.iter().map(|v| v / d).collect(),
            y: self.y / d,
            l: self.l,
        }
    }

    /// Buffer sizes `(|X_buf|, |Y_buf|, |L_buf|)`.
    pub fn buffer_sizes(&self) -> (usize, usize, usize) {
        (self.x_buf.len(), self.y_buf.len(), self.l_buf.len())
    }

    /// `y` mass currently sitting in the buffers.
    pub fn buffered_mass(&self) -> f64 {
        self.y_buf.iter().sum()
    }

    /// Buffered `x` mass, coordinate-wise.
    pub fn buffered_x(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.x.len()];
        for v in &self.x_buf {
            for (a, b) in acc.iter_mut().zip(v) {
                *a += b;
            }
        }
        acc
    }

    /// Stores an incoming triple. Multiple receptions from one neighbor are all kept.
    pub fn deposit(&mut self, msg: &Message) -> Result<()> {
        if msg.dst != self.id {
            return Err(Error::Routing { node: self.id, dst: msg.dst });
        }
        self.push_share(&msg.share);
        Ok(())
    }

    pub(crate) fn push_share(&mut self, share: &Share) {
        self.x_buf.push(share.x.clone());
        self.y_buf.push(share.y);
        self.l_buf.push(share.l);
    }

    // Consumes the buffers: returns (w, y) or None when nothing is buffered.
    fn drain(&mut self) -> Result<Option<(Vec<f64>, f64, u64)>> {
        if self.y_buf.is_empty() {
            return Ok(None);
        }
        let w = self.buffered_x();
        let y: f64 = self.y_buf.iter().sum();
        let l_max = self.l_buf.iter().copied().max().unwrap_or(self.l);
        let consumed = self.y_buf.len() as u64;
        self.x_buf.clear();
        self.y_buf.clear();
        self.l_buf.clear();
        if !(y > 0.0) || !y.is_finite() {
            return Err(Error::invariant(format!(
                "node {} push-sum weight became {y} after consuming {consumed} triples",
                self.id
            )));
        }
        Ok(Some((w, y, l_max)))
    }

    fn apply(
        &mut self,
        w: Vec<f64>,
        y: f64,
        alpha: f64,
        obj: &ObjectiveSpec,
    ) -> Result<()> {
        let z: Vec<f64> = w.iter().map(|v| v / y).collect();
        let g = obj.subgradient(&z)?;
        self.x = w.iter().zip(&g).map(|(wi, gi)| wi - alpha * gi).collect();
        self.y = y;
        self.z = z;
        self.updates += 1;
        self.stepsize_sum += alpha;
        Ok(())
    }

    /// AsySPA activation. Returns `None` (state untouched) when the buffers
    /// are empty.
    pub fn asyspa_activate(
        &mut self,
        out_degree: usize,
        sched: &StepsizeSchedule,
        obj: &ObjectiveSpec,
    ) -> Result<Option<Update>> {
        let consumed = self.y_buf.len();
        let Some((w, y, l_max)) = self.drain()? else {
            return Ok(None);
        };
        let l_before = self.l;
        let l_tilde = l_max.max(self.l);
        let (alpha, l_after) = if l_tilde < self.l {
            (0.0, self.l)
        } else {
            (sched.window_sum(self.l, l_tilde)?, l_tilde + 1)
        };
        self.apply(w, y, alpha, obj)?;
        self.l = l_after;
        Ok(Some(Update {
            alpha,
            l_before,
            l_after,
            consumed,
            share: self.share(out_degree),
        }))
    }

    /// Activation without adaptive stepsizes: `alpha = rho(c)` where `c` is
    /// the 1-based index of this node's update. Incoming `l` values are ignored.
    pub fn naive_activate(
        &mut self,
        out_degree: usize,
        sched: &StepsizeSchedule,
        obj: &ObjectiveSpec,
    ) -> Result<Option<Update>> {
        let consumed = self.y_buf.len();
        let Some((w, y, _)) = self.drain()? else {
            return Ok(None);
        };
        let l_before = self.l;
        let alpha = sched.rho(l_before)?;
        self.apply(w, y, alpha, obj)?;
        self.l = l_before + 1;
        Ok(Some(Update {
            alpha,
            l_before,
            l_after: self.l,
            consumed,
            share: self.share(out_degree),
        }))
    }

    /// Synchronous update for round `k` from buffered shares: `alpha = rho(k)`.
    pub fn synspa_activate(
        &mut self,
        k: u64,
        out_degree: usize,
        sched: &StepsizeSchedule,
        obj: &ObjectiveSpec,
    ) -> Result<Option<Update>> {
        let consumed = self.y_buf.len();
        let Some((w, y, _)) = self.drain()? else {
            return Ok(None);
        };
        let alpha = sched.rho(k)?;
        self.apply(w, y, alpha, obj)?;
        self.l = k + 1;
        Ok(Some(Update {
            alpha,
            l_before: k,
            l_after: k + 1,
            consumed,
            share: self.share(out_degree),
        }))
    }

    pub fn activate(
        &mut self,
        algorithm: Algorithm,
        round: u64,
        out_degree: usize,
        sched: &StepsizeSchedule,
        obj: &ObjectiveSpec,
    ) -> Result<Option<Update>> {
        match algorithm {
            Algorithm::Asyspa => self.asyspa_activate(out_degree, sched, obj),
            Algorithm::Naive => self.naive_activate(out_degree, sched, obj),
            Algorithm::Synspa => self.synspa_activate(round, out_degree, sched, obj),
        }
    }
}

/// One synchronous round on states whose `x`, `y` hold the previous round's
/// result: every node sums the shares of its in-neighbors and takes a step of
/// size `rho(k)`. Buffers are not used.
pub fn synspa_round(
    states: &mut [NodeState],
    g: &Digraph,
    k: u64,
    sched: &StepsizeSchedule,
    objs: &[ObjectiveSpec],
) -> Result<()> {
    let n = g.node_count();
    if states.len() != n || objs.len() != n {
        return Err(Error::param(format!(
            "synspa round needs {n} states and objectives, got {} and {}",
            states.len(),
            objs.len()
        )));
    }
    let shares: Vec<Share> = states.iter().map(|s| s.share(g.out_degree(s.id))).collect();
    let rho = sched.rho(k)?;
    for (i, state) in states.iter_mut().enumerate() {
        let mut w = vec![0.0; state.x.len()];
        let mut y = 0.0;
        for &j in g.in_neighbors(i) {
            for (a, b) in w.iter_mut().zip(&shares[j].x) {
                *a += b;
            }
            y += shares[j].y;
        }
        state.apply(w, y, rho, &objs[i])?;
        state.l = k + 1;
    }
    Ok(())
}
