//! Deterministic discrete-event simulation and numerical verification of
//! asynchronous subgradient-push optimization over directed graphs.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph`]: digraphs, topology constructors, asynchrony bounds.
//! - [`objective`]: local convex objectives and their subgradient oracles.
//! - [`stepsize`]: stepsize schedules with cached prefix sums.
//! - [`protocol`]: node-local state machines (AsySPA, SynSPA, naive baseline).
//! - [`simulator`]: the event engine producing global event-indexed traces.
//! - [`gensubgrad`]: the generalized subgradient method with adaptive stepsizes.
//! - [`analysis`]: trace replay through the augmented delay-free system,
//!   contraction and consensus checks, rate fitting.
//! - [`cli`]: experiment configs, dataset plumbing and the `asyspa-lab` commands.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod error;
pub mod gensubgrad;
pub mod graph;
pub mod objective;
pub mod protocol;
pub mod simulator;
pub mod stepsize;

pub use error::{Error, Result};
pub use graph::{AsynchronyBounds, Digraph, NodeId, TopologyKind};
pub use objective::{Dataset, ObjectiveSpec};
pub use protocol::{Algorithm, Message, NodeState};
pub use simulator::{SimConfig, Trace, TraceRecord};
pub use stepsize::{StepsizeKind, StepsizeSchedule, StepsizeSpec};
