//! Directed communication graphs and the asynchrony bounds derived from
//! activation and delay limits.
//!
//! Self-loops are implicit: every node is a member of its own out- and
//! in-neighbor sets, and is never stored as an explicit edge.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense 0-based node identifier.
pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Digraph {
    n: usize,
    // Sorted out-neighbor lists, each containing the node itself.
    out: Vec<Vec<NodeId>>,
    // Sorted in-neighbor lists, each containing the node itself.
    inc: Vec<Vec<NodeId>>,
}

impl Digraph {
    /// Builds a digraph on `n` nodes. Self-loop pairs `(i, i)` are accepted and
    /// ignored; duplicate edges collapse.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (NodeId, NodeId)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("digraph needs at least one node"));
        }
        let mut out: Vec<Vec<NodeId>> = (0..n).map(|i| vec![i]).collect();
        let mut inc: Vec<Vec<NodeId>> = (0..n).map(|i| vec![i]).collect();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::param(format!("edge ({i}, {j}) out of range for n={n}")));
            }
            if i != j {
                out[i].push(j);
                inc[j].push(i);
            }
        }
        for list in out.iter_mut().chain(inc.iter_mut()) {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { n, out, inc })
    }

    /// The degenerate single-node graph used for centralized reductions.
    pub fn single() -> Self {
        Self {
            n: 1,
            out: vec![vec![0]],
            inc: vec![vec![0]],
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// `N_out(i)`, including `i`, in increasing order.
    pub fn out_neighbors(&self, i: NodeId) -> &[NodeId] {
        &self.out[i]
    }

    /// `N_in(i)`, including `i`, in increasing order.
    pub fn in_neighbors(&self, i: NodeId) -> &[NodeId] {
        &self.inc[i]
    }

    /// `|N_out(i)|`, always at least 1.
    pub fn out_degree(&self, i: NodeId) -> usize {
        self.out[i].len()
    }

    /// Explicit edges (no self-loops) in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.out
            .iter()
            .enumerate()
            .flat_map(|(i, js)| js.iter().filter(move |&&j| j != i).map(move |&j| (i, j)))
    }

    pub fn edge_count(&self) -> usize {
        self.out.iter().map(|v| v.len() - 1).sum()
    }

    pub fn has_edge(&self, i: NodeId, j: NodeId) -> bool {
        i != j && self.out[i].binary_search(&j).is_ok()
    }

    /// Nodes reachable from `src` along directed edges (BFS).
    pub fn reachable_from(&self, src: NodeId) -> Vec<bool> {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([src]);
        seen[src] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &self.out[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    /// True iff every ordered pair of nodes is joined by a directed path.
    pub fn is_strongly_connected(&self) -> bool {
        (0..self.n).all(|i| self.reachable_from(i).into_iter().all(|r| r))
    }

    /// Edge-list text: a `n=<count>` header, then one `i j` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("n={}\n", self.n);
        for (i, j) in self.edges() {
            let _ = writeln!(s, "{i} {j}");
        }
        s
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::param("edge list is empty"))?;
        let n: usize = header
            .strip_prefix("n=")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::param(format!("bad edge list header `{header}`")))?;
        let mut edges = Vec::new();
        for line in lines {
            let mut parts = line.split_whitespace();
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::param(format!("bad edge line `{line}`")));
            };
            let parse = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| Error::param(format!("bad node id `{v}`")))
            };
            edges.push((parse(a)?, parse(b)?));
        }
        Self::new(n, edges)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    /// `i -> i+1 (mod n)`.
    Ring,
    /// `i -> i+1, ..., i+k (mod n)`.
    RingPlusK,
    /// `i -> i + 2^j + 1 (mod n)` for `j = 0..=floor(log2(n-1))`.
    Exponential,
}

pub fn build_topology(kind: TopologyKind, n: usize, k: Option<usize>) -> Result<Digraph> {
    match kind {
        TopologyKind::Ring => {
            if n < 2 {
                return Err(Error::param("ring topology needs n >= 2 (use Digraph::single)"));
            }
            Digraph::new(n, (0..n).map(|i| (i, (i + 1) % n)))
        }
        TopologyKind::RingPlusK => {
            let k = k.ok_or_else(|| Error::param("ring_plus_k needs k"))?;
            if n < 2 || k == 0 || k >= n {
                return Err(Error::param(format!(
                    "ring_plus_k needs n >= 2 and 1 <= k <= n-1, got n={n}, k={k}"
                )));
            }
            Digraph::new(n, (0..n).flat_map(|i| (1..=k).map(move |h| (i, (i + h) % n))))
        }
        TopologyKind::Exponential => {
            // Offsets 2^j + 1 are all >= 2, so n = 2 would collapse to self-loops.
            if n < 3 {
                return Err(Error::param("exponential topology needs n >= 3"));
            }
            let max_j = (usize::BITS - 1 - (n - 1).leading_zeros()) as usize;
            Digraph::new(
                n,
                (0..n).flat_map(|i| (0..=max_j).map(move |j| (i, (i + (1 << j) + 1) % n))),
            )
        }
    }
}

/// Integer bounds on asynchrony measured in global event indices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsynchronyBounds {
    pub n: usize,
    pub tau_min: f64,
    pub tau_max: f64,
    pub tau_delay: f64,
    /// Every node activates within any `b1` consecutive indices.
    pub b1: usize,
    /// Messages arrive within `b2` indices of being sent.
    pub b2: usize,
    /// Messages are consumed within `b` indices of being sent.
    pub b: usize,
}

impl AsynchronyBounds {
    pub fn nb(&self) -> usize {
        self.n * self.b
    }
}

// ceil(a / b), snapping ratios like 0.3 / 0.1 that land a hair off an integer.
// Activations spaced at least `b` apart fit at most ceil(L / b) times in an
// open or half-open interval of length L; the floor undercounts by one
// whenever the ratio is fractional.
fn ceil_ratio(a: f64, b: f64) -> usize {
    let r = a / b;
    let nearest = r.round();
    if (r - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as usize
    } else {
        r.ceil() as usize
    }
}

pub fn asynchrony_bounds(
    n: usize,
    tau_min: f64,
    tau_max: f64,
    tau_delay: f64,
) -> Result<AsynchronyBounds> {
    if n == 0 {
        return Err(Error::param("asynchrony bounds need n >= 1"));
    }
    if !(tau_min > 0.0) || !tau_min.is_finite() {
        return Err(Error::param(format!("tau_min must be positive, got {tau_min}")));
    }
    if !(tau_max >= tau_min) || !tau_max.is_finite() {
        return Err(Error::param(format!(
            "tau_max must be finite and >= tau_min, got {tau_max}"
        )));
    }
    if !(tau_delay >= 0.0) || !tau_delay.is_finite() {
        return Err(Error::param(format!("tau_delay must be >= 0, got {tau_delay}")));
    }
    let b1 = (n - 1) * ceil_ratio(tau_max, tau_min) + 1;
    let b2 = n * ceil_ratio(tau_delay, tau_min);
    Ok(AsynchronyBounds {
        n,
        tau_min,
        tau_max,
        tau_delay,
        b1,
        b2,
        b: b1 + b2,
    })
}
