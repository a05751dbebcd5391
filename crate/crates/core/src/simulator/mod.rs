//! Deterministic discrete-event engine.
//!
//! Simulated time is kept in integer ticks (`Timing::tick` time units each)
//! so that event ordering never depends on floating-point rounding. Events
//! are processed in `(time, deliveries before activations, node id, sequence)`
//! order. All activations sharing a timestamp form one global index `k`; they
//! read their buffers before any of the broadcasts they produce are
//! delivered, even when the delay is zero.
//!
//! Randomness comes from ChaCha8 streams derived from the run seed: one
//! stream per node for activation gaps and extra waits, one per directed edge
//! for transmission delays.

mod trace;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{asynchrony_bounds, AsynchronyBounds, Digraph, NodeId};
use crate::objective::ObjectiveSpec;
use crate::protocol::{Algorithm, Message, NodeState, Share};
use crate::stepsize::{StepsizeSchedule, StepsizeSpec};

pub use trace::{EventKind, Trace, TraceRecord};

fn default_tick() -> f64 {
    1e-6
}

fn default_one() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

/// How each node picks the gap until its next activation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum ActivationRule {
    /// Gaps drawn uniformly from `[tau_min, tau_max]`.
    #[default]
    Uniform,
    /// Fixed per-node periods.
    Periods { periods: Vec<f64> },
    /// Node `i` (0-based) waits `base * (i + 1)^beta`.
    PowerLaw { base: f64, beta: f64 },
}

/// Slowed-down nodes: their period is multiplied by `period_factor` and an
/// exponentially distributed extra wait with mean `extra_wait_mean` follows
/// every update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Straggler {
    pub nodes: Vec<NodeId>,
    #[serde(default = "default_one")]
    pub period_factor: f64,
    #[serde(default)]
    pub extra_wait_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    pub tau_min: f64,
    pub tau_max: f64,
    #[serde(default)]
    pub tau_delay: f64,
    #[serde(default)]
    pub activation: ActivationRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub straggler: Option<Straggler>,
    /// Time of each node's first activation; defaults to one drawn gap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<Vec<f64>>,
    #[serde(default = "default_tick")]
    pub tick: f64,
}

impl Timing {
    /// Fixed periods with `tau_min`/`tau_max` taken from the periods themselves.
    pub fn periodic(periods: Vec<f64>, tau_delay: f64) -> Self {
        let tau_min = periods.iter().cloned().fold(f64::INFINITY, f64::min);
        let tau_max = periods.iter().cloned().fold(0.0, f64::max);
        Self {
            tau_min,
            tau_max,
            tau_delay,
            activation: ActivationRule::Periods { periods },
            straggler: None,
            offsets: None,
            tick: default_tick(),
        }
    }

    pub fn uniform(tau_min: f64, tau_max: f64, tau_delay: f64) -> Self {
        Self {
            tau_min,
            tau_max,
            tau_delay,
            activation: ActivationRule::Uniform,
            straggler: None,
            offsets: None,
            tick: default_tick(),
        }
    }

    fn ticks(&self, v: f64) -> u64 {
        (v / self.tick).round() as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceOptions {
    #[serde(default = "default_true")]
    pub record: bool,
    #[serde(default = "default_true")]
    pub deliveries: bool,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self { record: true, deliveries: true }
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub graph: Digraph,
    pub algorithm: Algorithm,
    pub stepsize: StepsizeSpec,
    pub objectives: Vec<ObjectiveSpec>,
    /// Initial `x` per node; zeros when absent.
    pub x0: Option<Vec<Vec<f64>>>,
    pub timing: Timing,
    pub seed: u64,
    /// Number of node activations to simulate.
    pub max_events: u64,
    pub trace: TraceOptions,
}

impl SimConfig {
    pub fn dim(&self) -> usize {
        self.objectives.first().map_or(0, ObjectiveSpec::dim)
    }

    pub fn bounds(&self) -> Result<AsynchronyBounds> {
        let t = &self.timing;
        asynchrony_bounds(self.graph.node_count(), t.tau_min, t.tau_max, t.tau_delay)
    }

    /// Checks the run against its activation and delay bounds before anything executes.
    pub fn validate(&self) -> Result<()> {
        let n = self.graph.node_count();
        self.bounds()?;
        let t = &self.timing;
        if !(t.tick > 0.0) || !t.tick.is_finite() {
            return Err(Error::param("timing.tick must be positive"));
        }
        if t.ticks(t.tau_min) == 0 {
            return Err(Error::param("tau_min is below the tick resolution"));
        }
        if !self.graph.is_strongly_connected() {
            return Err(Error::param("communication graph is not strongly connected"));
        }
        if self.objectives.len() != n {
            return Err(Error::param(format!(
                "{} objectives for {n} nodes",
                self.objectives.len()
            )));
        }
        let dim = self.dim();
        if dim == 0 || self.objectives.iter().any(|o| o.dim() != dim) {
            return Err(Error::param("objectives must share one positive dimension"));
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != n || x0.iter().any(|v| v.len() != dim) {
                return Err(Error::param("x0 must hold one vector of the objective dimension per node"));
            }
        }
        match &t.activation {
            ActivationRule::Uniform => {}
            ActivationRule::Periods { periods } => {
                if periods.len() != n {
                    return Err(Error::param(format!("{} periods for {n} nodes", periods.len())));
                }
                if periods.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
                    return Err(Error::param("periods must be positive"));
                }
            }
            ActivationRule::PowerLaw { base, beta } => {
                if !(*base > 0.0) || !beta.is_finite() {
                    return Err(Error::param("power-law periods need base > 0"));
                }
            }
        }
        if let Some(s) = &t.straggler {
            if s.nodes.iter().any(|&i| i >= n) {
                return Err(Error::param("straggler node out of range"));
            }
            if !(s.period_factor > 0.0) || !(s.extra_wait_mean >= 0.0) {
                return Err(Error::param("straggler needs period_factor > 0 and extra_wait_mean >= 0"));
            }
        }
        if let Some(off) = &t.offsets {
            if off.len() != n || off.iter().any(|&o| !(o > 0.0) || o > t.tau_max) {
                return Err(Error::param("offsets must give one time in (0, tau_max] per node"));
            }
        }
        StepsizeSchedule::new(self.stepsize)?;
        Ok(())
    }
}

/// View handed to observers after initialization and every activation instant.
pub struct Snapshot<'a> {
    pub k: u64,
    pub t: f64,
    pub states: &'a [NodeState],
    pub activated: &'a [NodeId],
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trace: Trace,
    pub states: Vec<NodeState>,
    pub bounds: AsynchronyBounds,
    /// Final global index.
    pub instants: u64,
    pub activations: u64,
    pub deliveries: u64,
    pub final_time: f64,
    /// Largest `|total y mass - n|` seen after any event.
    pub max_mass_error: f64,
}

pub fn run(cfg: &SimConfig) -> Result<RunOutput> {
    run_observed(cfg, &mut |_| Ok(()))
}

/// Runs the simulation, calling `observer` once after initialization (`k = 0`)
/// and then after every activation instant.
pub fn run_observed(
    cfg: &SimConfig,
    observer: &mut dyn FnMut(&Snapshot) -> Result<()>,
) -> Result<RunOutput> {
    cfg.validate()?;
    let mut engine = Engine::new(cfg)?;
    match cfg.algorithm {
        Algorithm::Synspa => engine.run_lockstep(observer)?,
        Algorithm::Asyspa | Algorithm::Naive => engine.run_async(observer)?,
    }
    Ok(engine.finish())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    Deliver = 0,
    Activate = 1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Event {
    time: u64,
    kind: Kind,
    node: NodeId,
    seq: u64,
}

struct Gaps {
    base: Vec<Option<u64>>,
    factor: Vec<f64>,
    extra_mean: Vec<f64>,
    min: u64,
    max: u64,
    tick: f64,
    rngs: Vec<ChaCha8Rng>,
}

impl Gaps {
    fn new(cfg: &SimConfig) -> Self {
        let t = &cfg.timing;
        let n = cfg.graph.node_count();
        let base = (0..n)
            .map(|i| match &t.activation {
                ActivationRule::Uniform => None,
                ActivationRule::Periods { periods } => Some(periods[i]),
                ActivationRule::PowerLaw { base, beta } => Some(base * ((i + 1) as f64).powf(*beta)),
            })
            .map(|p| p.map(|p| t.ticks(p)))
            .collect();
        let mut factor = vec![1.0; n];
        let mut extra_mean = vec![0.0; n];
        if let Some(s) = &t.straggler {
            for &i in &s.nodes {
                factor[i] = s.period_factor;
                extra_mean[i] = s.extra_wait_mean;
            }
        }
        let rngs = (0..n).map(|i| stream(cfg.seed, 1 + i as u64)).collect();
        Self {
            base,
            factor,
            extra_mean,
            min: t.ticks(t.tau_min),
            max: t.ticks(t.tau_max),
            tick: t.tick,
            rngs,
        }
    }

    fn next(&mut self, i: NodeId) -> u64 {
        let rng = &mut self.rngs[i];
        let raw = match self.base[i] {
            Some(p) => p,
            None => rng.gen_range(self.min..=self.max),
        };
        let mut gap = (raw as f64 * self.factor[i]).round() as u64;
        if self.extra_mean[i] > 0.0 {
            // Exponential draw from a 53-bit integer; clipped to keep gaps <= tau_max.
            let u = ((rng.gen::<u64>() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
            let wait = (-self.extra_mean[i] * u.ln() / self.tick).round() as u64;
            gap += wait.min(self.max - self.min);
        }
        gap.clamp(self.min, self.max)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    sched: StepsizeSchedule,
    states: Vec<NodeState>,
    gaps: Gaps,
    delay_rngs: BTreeMap<(NodeId, NodeId), ChaCha8Rng>,
    delay_max: u64,
    queue: BinaryHeap<Reverse<Event>>,
    in_flight: BTreeMap<u64, Message>,
    next_msg: u64,
    trace: Trace,
    k: u64,
    activations: u64,
    deliveries: u64,
    now: u64,
    max_mass_error: f64,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a SimConfig) -> Result<Self> {
        let n = cfg.graph.node_count();
        let dim = cfg.dim();
        let states = (0..n)
            .map(|i| {
                let x0 = cfg.x0.as_ref().map_or_else(|| vec![0.0; dim], |x| x[i].clone());
                NodeState::new(i, x0)
            })
            .collect();
        let delay_rngs = cfg
            .graph
            .edges()
            .map(|(i, j)| ((i, j), stream(cfg.seed, (1 << 32) + (i * n + j) as u64)))
            .collect();
        Ok(Self {
            cfg,
            sched: StepsizeSchedule::new(cfg.stepsize)?,
            states,
            gaps: Gaps::new(cfg),
            delay_rngs,
            delay_max: cfg.timing.ticks(cfg.timing.tau_delay),
            queue: BinaryHeap::new(),
            in_flight: BTreeMap::new(),
            next_msg: 0,
            trace: Trace::default(),
            k: 0,
            activations: 0,
            deliveries: 0,
            now: 0,
            max_mass_error: 0.0,
        })
    }

    fn time(&self, ticks: u64) -> f64 {
        ticks as f64 * self.cfg.timing.tick
    }

    fn n(&self) -> usize {
        self.cfg.graph.node_count()
    }

    // Addresses one share to every out-neighbor; returns the message ids.
    fn broadcast(&mut self, src: NodeId, share: &Share, lockstep: bool) -> Vec<u64> {
        let out: Vec<NodeId> = self.cfg.graph.out_neighbors(src).to_vec();
        let mut ids = Vec::with_capacity(out.len());
        for dst in out {
            let delay = if dst == src || lockstep || self.delay_max == 0 {
                0
            } else {
                let rng = self.delay_rngs.get_mut(&(src, dst)).expect("edge stream");
                rng.gen_range(0..=self.delay_max)
            };
            let id = self.next_msg;
            self.next_msg += 1;
            let msg = Message {
                id,
                src,
                dst,
                share: share.clone(),
                send_time: self.now,
                deliver_time: self.now + delay,
            };
            self.queue.push(Reverse(Event {
                time: msg.deliver_time,
                kind: Kind::Deliver,
                node: dst,
                seq: id,
            }));
            self.in_flight.insert(id, msg);
            ids.push(id);
        }
        ids
    }

    fn initialize(&mut self, lockstep: bool) {
        for i in 0..self.n() {
            let share = self.states[i].initial_share(self.cfg.graph.out_degree(i));
            let ids = self.broadcast(i, &share, lockstep);
            if self.cfg.trace.record {
                let s = &self.states[i];
                self.trace.records.push(TraceRecord {
                    k: 0,
                    t: 0.0,
                    kind: EventKind::Init,
                    node: i,
                    l_before: Some(s.l),
                    l_after: Some(s.l),
                    alpha: Some(0.0),
                    y: Some(s.y),
                    z: Some(s.z.clone()),
                    x: Some(s.x.clone()),
                    consumed: Some(0),
                    msgs: ids,
                });
            }
        }
    }

    fn deliver(&mut self, ev: Event) -> Result<()> {
        let msg = self
            .in_flight
            .remove(&ev.seq)
            .ok_or_else(|| Error::invariant(format!("message {} delivered twice", ev.seq)))?;
        self.states[msg.dst].deposit(&msg)?;
        self.deliveries += 1;
        if self.cfg.trace.record && self.cfg.trace.deliveries {
            let t = self.time(ev.time);
            self.trace.records.push(TraceRecord::deliver(self.k, t, msg.dst, msg.id));
        }
        Ok(())
    }

    fn check_mass(&mut self) {
        let buffered: f64 = self.states.iter().map(NodeState::buffered_mass).sum();
        let flying: f64 = self.in_flight.values().map(|m| m.share.y).sum();
        let err = (buffered + flying - self.n() as f64).abs();
        self.max_mass_error = self.max_mass_error.max(err);
    }

    // Activates `node` at the current instant and records it.
    fn activate(&mut self, node: NodeId, lockstep: bool) -> Result<()> {
        let deg = self.cfg.graph.out_degree(node);
        let update = self.states[node].activate(
            self.cfg.algorithm,
            self.k,
            deg,
            &self.sched,
            &self.cfg.objectives[node],
        )?;
        self.activations += 1;
        let (ids, alpha, l_before, l_after, consumed) = match update {
            Some(up) => {
                let ids = self.broadcast(node, &up.share, lockstep);
                (ids, up.alpha, up.l_before, up.l_after, up.consumed)
            }
            None => {
                let l = self.states[node].l;
                (Vec::new(), 0.0, l, l, 0)
            }
        };
        if self.cfg.trace.record {
            let t = self.time(self.now);
            let s = &self.states[node];
            self.trace.records.push(TraceRecord {
                k: self.k,
                t,
                kind: EventKind::Activate,
                node,
                l_before: Some(l_before),
                l_after: Some(l_after),
                alpha: Some(alpha),
                y: Some(s.y),
                z: Some(s.z.clone()),
                x: Some(s.x.clone()),
                consumed: Some(consumed),
                msgs: ids,
            });
        }
        Ok(())
    }

    fn run_async(&mut self, observer: &mut dyn FnMut(&Snapshot) -> Result<()>) -> Result<()> {
        self.initialize(false);
        for i in 0..self.n() {
            let first = match &self.cfg.timing.offsets {
                Some(off) => self.cfg.timing.ticks(off[i]),
                None => self.gaps.next(i),
            };
            self.queue.push(Reverse(Event { time: first, kind: Kind::Activate, node: i, seq: 0 }));
        }
        self.check_mass();
        self.observe_initial(observer)?;
        while let Some(Reverse(ev)) = self.queue.pop() {
            self.now = ev.time;
            match ev.kind {
                Kind::Deliver => {
                    self.deliver(ev)?;
                    self.check_mass();
                }
                Kind::Activate if self.activations >= self.cfg.max_events => {}
                Kind::Activate => {
                    let mut batch = vec![ev.node];
                    while let Some(Reverse(next)) = self.queue.peek() {
                        if next.time != ev.time || next.kind != Kind::Activate {
                            break;
                        }
                        batch.push(next.node);
                        self.queue.pop();
                    }
                    self.k += 1;
                    let mut activated = Vec::with_capacity(batch.len());
                    for node in batch {
                        if self.activations >= self.cfg.max_events {
                            break;
                        }
                        self.activate(node, false)?;
                        activated.push(node);
                        let gap = self.gaps.next(node);
                        self.queue.push(Reverse(Event {
                            time: self.now + gap,
                            kind: Kind::Activate,
                            node,
                            seq: 0,
                        }));
                    }
                    self.check_mass();
                    observer(&Snapshot {
                        k: self.k,
                        t: self.time(self.now),
                        states: &self.states,
                        activated: &activated,
                    })?;
                }
            }
        }
        Ok(())
    }

    // Synchronous rounds: every node draws its gap and the round lasts as long
    // as the slowest one; shares travel without delay between rounds.
    fn run_lockstep(&mut self, observer: &mut dyn FnMut(&Snapshot) -> Result<()>) -> Result<()> {
        self.initialize(true);
        self.drain_deliveries()?;
        self.observe_initial(observer)?;
        let n = self.n();
        let all: Vec<NodeId> = (0..n).collect();
        while self.activations < self.cfg.max_events {
            let duration = (0..n).map(|i| self.gaps.next(i)).max().unwrap_or(0);
            self.now += duration;
            self.k += 1;
            let mut activated = Vec::with_capacity(n);
            for &i in &all {
                if self.activations >= self.cfg.max_events {
                    break;
                }
                self.activate(i, true)?;
                activated.push(i);
            }
            self.drain_deliveries()?;
            self.check_mass();
            observer(&Snapshot {
                k: self.k,
                t: self.time(self.now),
                states: &self.states,
                activated: &activated,
            })?;
        }
        Ok(())
    }

    fn observe_initial(&self, observer: &mut dyn FnMut(&Snapshot) -> Result<()>) -> Result<()> {
        observer(&Snapshot { k: 0, t: 0.0, states: &self.states, activated: &[] })
    }

    fn drain_deliveries(&mut self) -> Result<()> {
        while let Some(Reverse(ev)) = self.queue.pop() {
            self.deliver(ev)?;
        }
        Ok(())
    }

    fn finish(self) -> RunOutput {
        let final_time = self.time(self.now);
        RunOutput {
            trace: self.trace,
            states: self.states,
            bounds: self.cfg.bounds().expect("validated"),
            instants: self.k,
            activations: self.activations,
            deliveries: self.deliveries,
            final_time,
            max_mass_error: self.max_mass_error,
        }
    }
}
