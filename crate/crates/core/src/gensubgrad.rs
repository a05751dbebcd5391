//! Generalized subgradient method with adaptive stepsize windows:
//!
//! `x(k+1) = x(k) - (sum_{t = r_s(k)+1}^{r_s(k+1)} rho(t)) * grad f_s(x(k) + eps(k))`
//!
//! where `s = s(k)` picks a component and only that component's counter
//! `r_s` advances. Cyclic incremental and full subgradient methods are the
//! two built-in schedules. Coverage and counter-balance bounds are checked
//! at every step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{total_value, ObjectiveSpec};
use crate::stepsize::StepsizeSchedule;

/// Component selector `k -> s(k)` (0-based components).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    /// `0, 1, ..., n-1, 0, 1, ...`
    Cyclic,
    /// The given sequence repeated forever.
    Periodic(Vec<usize>),
}

/// Counter increments `Delta r_s(k)` applied to the selected component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Increments {
    Unit,
    /// `Delta r(k)` read from this sequence, repeated.
    Periodic(Vec<u64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseRule {
    Zero,
    /// Evaluate every subgradient of a cycle at the cycle's first iterate,
    /// `eps(k) = x(n * floor((k-1)/n) + 1) - x(k)`.
    FreezePoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSchedule {
    pub n: usize,
    pub selector: Selector,
    pub increments: Increments,
    /// Every component must be selected within any `sigma1` consecutive steps.
    pub sigma1: u64,
    /// Bound on counter spread and on single increments.
    pub sigma2: u64,
    pub noise: NoiseRule,
}

impl GenSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::param("schedule needs at least one component"));
        }
        if self.sigma1 == 0 || self.sigma2 == 0 {
            return Err(Error::param("sigma1 and sigma2 must be positive"));
        }
        match &self.selector {
            Selector::Cyclic => {}
            Selector::Periodic(seq) => {
                if seq.is_empty() || seq.iter().any(|&s| s >= self.n) {
                    return Err(Error::param("selector sequence must be nonempty with components < n"));
                }
            }
        }
        if let Increments::Periodic(seq) = &self.increments {
            if seq.is_empty() || seq.contains(&0) {
                return Err(Error::param("counter increments must be positive"));
            }
        }
        Ok(())
    }

    /// `s(k)` for `k >= 1`.
    pub fn select(&self, k: u64) -> usize {
        match &self.selector {
            Selector::Cyclic => ((k - 1) % self.n as u64) as usize,
            Selector::Periodic(seq) => seq[((k - 1) % seq.len() as u64) as usize],
        }
    }

    pub fn increment(&self, k: u64) -> u64 {
        match &self.increments {
            Increments::Unit => 1,
            Increments::Periodic(seq) => seq[((k - 1) % seq.len() as u64) as usize],
        }
    }
}

/// Cyclic incremental subgradient method.
pub fn make_cyclic_incremental(n: usize) -> GenSchedule {
    GenSchedule {
        n,
        selector: Selector::Cyclic,
        increments: Increments::Unit,
        sigma1: n as u64,
        sigma2: 1,
        noise: NoiseRule::Zero,
    }
}

/// Full subgradient method written as a generalized one via freeze-point noise.
pub fn make_full_subgradient(n: usize) -> GenSchedule {
    GenSchedule { noise: NoiseRule::FreezePoint, ..make_cyclic_incremental(n) }
}

/// Iterate of the method together with its runtime monitors.
#[derive(Clone, Debug)]
pub struct GenState {
    /// Index of the next step (starts at 1).
    pub k: u64,
    pub x: Vec<f64>,
    pub r: Vec<u64>,
    anchor: Vec<f64>,
    last_selected: Vec<u64>,
    /// `sum_k rho(k) ||eps(k)||`.
    pub noise_sum: f64,
    /// `max_k ||eps(k)|| / rho(k)`.
    pub noise_ratio: f64,
    /// Largest `||eps(k)||` seen.
    pub max_noise: f64,
}

impl GenState {
    pub fn new(n: usize, x0: Vec<f64>) -> Self {
        Self {
            k: 1,
            anchor: x0.clone(),
            x: x0,
            r: vec![0; n],
            last_selected: vec![0; n],
            noise_sum: 0.0,
            noise_ratio: 0.0,
            max_noise: 0.0,
        }
    }
}

/// One step of the method; errors if the schedule breaks its declared bounds.
pub fn gen_step(
    state: &mut GenState,
    sched: &GenSchedule,
    rho: &StepsizeSchedule,
    objs: &[ObjectiveSpec],
) -> Result<()> {
    if objs.len() != sched.n || state.r.len() != sched.n {
        return Err(Error::param(format!(
            "schedule over {} components given {} objectives",
            sched.n,
            objs.len()
        )));
    }
    let k = state.k;
    let s = sched.select(k);
    let dr = sched.increment(k);
    if dr > sched.sigma2 {
        return Err(Error::invariant(format!(
            "step {k}: counter increment {dr} exceeds sigma2 = {}",
            sched.sigma2
        )));
    }

    let n = sched.n as u64;
    if sched.noise == NoiseRule::FreezePoint && (k - 1).is_multiple_of(n) {
        state.anchor.clone_from(&state.x);
    }
    let point = match sched.noise {
        NoiseRule::Zero => state.x.clone(),
        NoiseRule::FreezePoint => state.anchor.clone(),
    };
    let eps = point.iter().zip(&state.x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();

    let from = state.r[s] + 1;
    let to = state.r[s] + dr;
    let alpha = rho.window_sum(from, to)?;
    let g = objs[s].subgradient(&point)?;
    for (xi, gi) in state.x.iter_mut().zip(&g) {
        *xi -= alpha * gi;
    }
    state.r[s] = to;

    let rho_k = rho.rho(k)?;
    state.noise_sum += rho_k * eps;
    state.noise_ratio = state.noise_ratio.max(eps / rho_k);
    state.max_noise = state.max_noise.max(eps);

    state.last_selected[s] = k;
    if let Some(i) = (0..sched.n).find(|&i| k - state.last_selected[i] >= sched.sigma1) {
        return Err(Error::invariant(format!(
            "step {k}: component {i} not selected within sigma1 = {} steps",
            sched.sigma1
        )));
    }
    let hi = *state.r.iter().max().unwrap_or(&0);
    let lo = *state.r.iter().min().unwrap_or(&0);
    if hi - lo > sched.sigma2 {
        return Err(Error::invariant(format!(
            "step {k}: counter spread {} exceeds sigma2 = {}",
            hi - lo,
            sched.sigma2
        )));
    }
    state.k += 1;
    Ok(())
}

/// Optimal set of a test objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimalSet {
    Points(Vec<Vec<f64>>),
    /// Scalar interval `[lo, hi]`.
    Interval(f64, f64),
}

impl OptimalSet {
    /// Euclidean distance `d(x)` to the set.
    pub fn distance(&self, x: &[f64]) -> f64 {
        match self {
            OptimalSet::Points(pts) => pts
                .iter()
                .map(|p| p.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min),
            OptimalSet::Interval(lo, hi) => {
                let v = x[0];
                if v < *lo {
                    lo - v
                } else if v > *hi {
                    v - hi
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub f_star: f64,
    pub set: OptimalSet,
}

impl Optimum {
    /// Closed-form optimum of `sum |x - c_i|` (scalar): the median set.
    pub fn of_abs_sum(centers: &[f64]) -> Self {
        let mut c = centers.to_vec();
        c.sort_by(f64::total_cmp);
        let m = c.len();
        let (lo, hi) = if m % 2 == 1 { (c[m / 2], c[m / 2]) } else { (c[m / 2 - 1], c[m / 2]) };
        let f_star = c.iter().map(|v| (v - lo).abs()).sum();
        let set = if lo == hi { OptimalSet::Points(vec![vec![lo]]) } else { OptimalSet::Interval(lo, hi) };
        Self { f_star, set }
    }

    /// Closed-form optimum of `sum (x - c_i)^2 / 2` (scalar): the mean.
    pub fn of_quadratic_sum(centers: &[f64]) -> Self {
        let mean = centers.iter().sum::<f64>() / centers.len() as f64;
        let f_star = centers.iter().map(|c| 0.5 * (mean - c).powi(2)).sum();
        Self { f_star, set: OptimalSet::Points(vec![vec![mean]]) }
    }
}

/// Error bound `f(x) - f* >= c_h d(x)^(1/theta)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderSpec {
    pub theta: f64,
    pub c_h: f64,
    pub optimum: Optimum,
}

impl HolderSpec {
    /// Smallest margin `f(x) - f* - c_h d(x)^(1/theta)` over `grid`; the bound
    /// holds on the grid iff this is nonnegative (up to rounding).
    pub fn min_margin(&self, objs: &[ObjectiveSpec], grid: &[Vec<f64>]) -> Result<f64> {
        if !(self.theta > 0.0 && self.theta <= 1.0) || !(self.c_h > 0.0) {
            return Err(Error::param("Hölder bound needs theta in (0, 1] and c_h > 0"));
        }
        let mut worst = f64::INFINITY;
        for x in grid {
            let gap = total_value(objs, x)? - self.optimum.f_star;
            let d = self.optimum.set.distance(x);
            worst = worst.min(gap - self.c_h * d.powf(1.0 / self.theta));
        }
        Ok(worst)
    }
}

/// One row of a measured run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub k: u64,
    pub f_err: f64,
    pub dist2: Option<f64>,
    /// `min_{t <= k} f(x(t)) - f*` (or the raw running minimum of `f`).
    pub running_min: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenRun {
    pub series: Vec<SeriesPoint>,
    pub x: Vec<f64>,
    pub noise_sum: f64,
    pub noise_ratio: f64,
    pub max_noise: f64,
}

/// Runs `steps` iterations from `x0`, recording `x(k)` for `k = 1..=steps+1`
/// every `every` steps. Without a known optimum `f_err` holds `f(x(k))` and
/// distances are omitted.
pub fn run_and_measure(
    x0: Vec<f64>,
    steps: u64,
    sched: &GenSchedule,
    rho: &StepsizeSchedule,
    objs: &[ObjectiveSpec],
    optimum: Option<&Optimum>,
    every: u64,
) -> Result<GenRun> {
    sched.validate()?;
    if objs.iter().any(|o| o.dim() != x0.len()) {
        return Err(Error::param("x0 dimension does not match the objectives"));
    }
    let every = every.max(1);
    let mut state = GenState::new(sched.n, x0);
    let mut series = Vec::new();
    let mut best = f64::INFINITY;
    let f_star = optimum.map_or(0.0, |o| o.f_star);
    for step in 0..=steps {
        let f_err = total_value(objs, &state.x)? - f_star;
        best = best.min(f_err);
        if (state.k - 1).is_multiple_of(every) || step == steps {
            series.push(SeriesPoint {
                k: state.k,
                f_err,
                dist2: optimum.map(|o| o.set.distance(&state.x).powi(2)),
                running_min: best,
            });
        }
        if step < steps {
            gen_step(&mut state, sched, rho, objs)?;
        }
    }
    Ok(GenRun {
        series,
        x: state.x,
        noise_sum: state.noise_sum,
        noise_ratio: state.noise_ratio,
        max_noise: state.max_noise,
    })
}

/// Writes `k,f_err,dist2` rows (dist2 left empty when unknown).
pub fn write_series_csv<W: std::io::Write>(run: &GenRun, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["k", "f_err", "dist2"])?;
    for p in &run.series {
        let d = p.dist2.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([p.k.to_string(), p.f_err.to_string(), d])?;
    }
    w.flush()?;
    Ok(())
}
