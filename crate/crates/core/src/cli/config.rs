//! JSON experiment configs. Unknown fields are rejected and every error names
//! the offending field path.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gensubgrad::{
    make_cyclic_incremental, make_full_subgradient, GenSchedule, Increments, NoiseRule, Optimum,
    Selector,
};
use crate::graph::{build_topology, Digraph, TopologyKind};
use crate::objective::{Dataset, ObjectiveSpec};
use crate::protocol::Algorithm;
use crate::simulator::{SimConfig, Timing, TraceOptions};
use crate::stepsize::StepsizeSpec;

use super::data::synthetic_dataset;

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_every() -> u64 {
    1
}

fn default_gamma() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Root of the per-run output directories (default `runs`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gensubgrad: Option<GenSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub graph: GraphSpec,
    pub algorithm: Algorithm,
    pub stepsize: StepsizeSpec,
    pub objective: ObjectiveConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<Vec<f64>>>,
    pub timing: Timing,
    pub max_events: u64,
    #[serde(default)]
    pub trace: TraceOptions,
    #[serde(default = "default_every")]
    pub metrics_every: u64,
    /// Optimal value for the averaged error; estimated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_star: Option<f64>,
    /// Iterations of the centralized run estimating `f*` (default 10x `max_events`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_star_iterations: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    Single,
    Ring { n: usize },
    RingPlusK { n: usize, k: usize },
    Exponential { n: usize },
    Edges { n: usize, edges: Vec<(usize, usize)> },
    /// Edge-list file (`n=<count>` header, one `i j` pair per line).
    File { path: PathBuf },
}

impl GraphSpec {
    pub fn build(&self, base: &Path) -> Result<Digraph> {
        match self {
            GraphSpec::Single => Ok(Digraph::single()),
            GraphSpec::Ring { n } => build_topology(TopologyKind::Ring, *n, None),
            GraphSpec::RingPlusK { n, k } => build_topology(TopologyKind::RingPlusK, *n, Some(*k)),
            GraphSpec::Exponential { n } => build_topology(TopologyKind::Exponential, *n, None),
            GraphSpec::Edges { n, edges } => Digraph::new(*n, edges.iter().copied()),
            GraphSpec::File { path } => Digraph::from_edge_list(&fs::read_to_string(base.join(path))?),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Csv {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_classes: Option<usize>,
    },
    Synthetic { n_s: usize, n_f: usize, n_c: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveConfig {
    /// `f_i(x) = |x - c_i|`, one center per node (or component).
    Abs { centers: Vec<f64> },
    /// `f_i(x) = (x - c_i)^2 / 2`.
    Quadratic { centers: Vec<f64> },
    Logistic {
        data: DataSource,
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default = "default_true")]
        normalize: bool,
        #[serde(default)]
        categorical: BTreeSet<usize>,
    },
    Hinge {
        data: DataSource,
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default = "default_true")]
        normalize: bool,
        #[serde(default)]
        categorical: BTreeSet<usize>,
    },
}

/// Objectives split across nodes, plus what the averaged error needs.
#[derive(Clone, Debug)]
pub struct BuiltObjectives {
    pub parts: Vec<ObjectiveSpec>,
    /// Instances behind the objective (1 for analytic ones).
    pub n_s: usize,
    /// Closed-form optimum when one is known.
    pub optimum: Option<Optimum>,
}

impl ObjectiveConfig {
    /// Splits the objective over `n` nodes. Dataset objectives are sharded
    /// round-robin and each shard carries `gamma / n` of the regularizer.
    pub fn build(&self, n: usize, base: &Path) -> Result<BuiltObjectives> {
        match self {
            ObjectiveConfig::Abs { centers } | ObjectiveConfig::Quadratic { centers } => {
                if centers.len() != n {
                    return Err(Error::param(format!("{} centers for {n} nodes", centers.len())));
                }
                let abs = matches!(self, ObjectiveConfig::Abs { .. });
                let parts = centers
                    .iter()
                    .map(|&c| if abs { ObjectiveSpec::abs(c) } else { ObjectiveSpec::quadratic(c) })
                    .collect();
                let optimum = if abs { Optimum::of_abs_sum(centers) } else { Optimum::of_quadratic_sum(centers) };
                Ok(BuiltObjectives { parts, n_s: 1, optimum: Some(optimum) })
            }
            ObjectiveConfig::Logistic { data, gamma, normalize, categorical }
            | ObjectiveConfig::Hinge { data, gamma, normalize, categorical } => {
                let mut ds = data.load(base)?;
                if *normalize {
                    ds = ds.normalize(categorical)?;
                }
                let n_s = ds.len();
                let logistic = matches!(self, ObjectiveConfig::Logistic { .. });
                let g = gamma / n as f64;
                let parts = ds
                    .shard(n)?
                    .into_iter()
                    .map(|s| {
                        let s = Arc::new(s);
                        if logistic { ObjectiveSpec::logistic(s, g) } else { ObjectiveSpec::hinge(s, g) }
                    })
                    .collect();
                Ok(BuiltObjectives { parts, n_s, optimum: None })
            }
        }
    }
}

impl DataSource {
    pub fn load(&self, base: &Path) -> Result<Dataset> {
        match self {
            DataSource::Csv { path, n_classes } => {
                let file = fs::File::open(base.join(path))?;
                Dataset::read_csv(file, *n_classes)
            }
            DataSource::Synthetic { n_s, n_f, n_c, seed } => synthetic_dataset(*n_s, *n_f, *n_c, *seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GenScheduleConfig {
    CyclicIncremental,
    FullSubgradient,
    Custom {
        selector: Selector,
        increments: Increments,
        sigma1: u64,
        sigma2: u64,
        noise: NoiseRule,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    pub schedule: GenScheduleConfig,
    pub stepsize: StepsizeSpec,
    /// Component objectives; only the analytic kinds are accepted.
    pub objective: ObjectiveConfig,
    pub x0: Vec<f64>,
    pub steps: u64,
    #[serde(default = "default_every")]
    pub record_every: u64,
}

impl GenSpec {
    pub fn schedule(&self, n: usize) -> GenSchedule {
        match &self.schedule {
            GenScheduleConfig::CyclicIncremental => make_cyclic_incremental(n),
            GenScheduleConfig::FullSubgradient => make_full_subgradient(n),
            GenScheduleConfig::Custom { selector, increments, sigma1, sigma2, noise } => GenSchedule {
                n,
                selector: selector.clone(),
                increments: increments.clone(),
                sigma1: *sigma1,
                sigma2: *sigma2,
                noise: *noise,
            },
        }
    }

    pub fn components(&self) -> usize {
        match &self.objective {
            ObjectiveConfig::Abs { centers } | ObjectiveConfig::Quadratic { centers } => centers.len(),
            _ => 0,
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a config; errors carry the JSON path of the bad field.
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: if e.path().to_string() == "." { origin.to_string() } else { e.path().to_string() },
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| "run".into())
    }

    fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: &str| Error::Config { path: path.into(), message: message.into() };
        match (&self.simulate, &self.gensubgrad) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(bad("simulate", "exactly one of `simulate` and `gensubgrad` is required"))
            }
            (Some(sim), None) => {
                if sim.max_events == 0 {
                    return Err(bad("simulate.max_events", "must be positive"));
                }
                if sim.metrics_every == 0 {
                    return Err(bad("simulate.metrics_every", "must be positive"));
                }
            }
            (None, Some(gen)) => {
                if gen.components() == 0 {
                    return Err(bad("gensubgrad.objective", "only abs and quadratic components are supported"));
                }
                if gen.x0.len() != 1 {
                    return Err(bad("gensubgrad.x0", "analytic components are scalar; x0 needs one entry"));
                }
            }
        }
        if self.seeds.is_empty() {
            return Err(bad("seeds", "at least one seed is required"));
        }
        if let Some(name) = &self.name {
            if name.is_empty() || name.contains(['/', '\\']) {
                return Err(bad("name", "must be a nonempty plain file name"));
            }
        }
        Ok(())
    }
}

impl SimSpec {
    /// Assembles the engine config for one seed. `base` resolves relative paths.
    pub fn sim_config(&self, base: &Path, seed: u64) -> Result<(SimConfig, BuiltObjectives)> {
        let graph = self.graph.build(base)?;
        let built = self.objective.build(graph.node_count(), base)?;
        let cfg = SimConfig {
            graph,
            algorithm: self.algorithm,
            stepsize: self.stepsize,
            objectives: built.parts.clone(),
            x0: self.x0.clone(),
            timing: self.timing.clone(),
            seed,
            max_events: self.max_events,
            trace: self.trace,
        };
        cfg.validate()?;
        Ok((cfg, built))
    }
}
