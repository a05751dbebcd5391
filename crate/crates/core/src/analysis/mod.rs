//! Post-hoc verification of simulated runs: augmented-system replay,
//! contraction of mixing products, consensus, asynchrony audits, update
//! rates and convergence-rate fits.

mod audit;
mod augmented;
mod metrics;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::simulator::Trace;

pub use audit::{audit_asynchrony, audit_stepsize_balance, AsynchronyAudit, BalanceAudit};
pub use augmented::{
    reconstruct_augmented, Activation, AugmentedStep, AugmentedSystem, Dense, MessageLog,
    SentMessage, SparseColumns,
};
pub use metrics::{
    metrics_from_trace, read_metrics_csv, write_metrics_csv, MetricsContext, MetricsRow,
    MetricsTracker, METRICS_HEADER,
};

/// Contraction constants of the augmented mixing products, kept in log space
/// because `n^(nb)` overflows and `lambda` rounds to 1 for modest `n b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GraphConstants {
    pub n: usize,
    pub b: usize,
    /// `ln(4 n (1 + n^(nb)))`.
    pub ln_alpha_bound: f64,
    /// `ln lambda`, `lambda = (1 - n^(-nb))^(1/(nb))`.
    pub ln_lambda: f64,
}

impl GraphConstants {
    pub fn new(n: usize, b: usize) -> Result<Self> {
        if n == 0 || b == 0 {
            return Err(Error::param("constants need n >= 1 and b >= 1"));
        }
        let nb = (n * b) as f64;
        let ln_n = (n as f64).ln();
        let a = nb * ln_n;
        // ln(1 + e^a) without overflow.
        let ln_one_plus = if a > 0.0 { a + (-a).exp().ln_1p() } else { a.exp().ln_1p() };
        Ok(Self {
            n,
            b,
            ln_alpha_bound: (4.0 * n as f64).ln() + ln_one_plus,
            ln_lambda: (-(-a).exp()).ln_1p() / nb,
        })
    }

    pub fn nb(&self) -> usize {
        self.n * self.b
    }

    pub fn alpha_bound(&self) -> f64 {
        self.ln_alpha_bound.exp()
    }

    pub fn lambda(&self) -> f64 {
        self.ln_lambda.exp()
    }

    /// `1 - lambda` computed without cancellation.
    pub fn one_minus_lambda(&self) -> f64 {
        -self.ln_lambda.exp_m1()
    }

    /// `ln` of the contraction bound `alpha_bound * lambda^(k - t)`.
    pub fn ln_bound(&self, gap: u64) -> f64 {
        self.ln_alpha_bound + gap as f64 * self.ln_lambda
    }

    /// `ln n^(-nb)`: floor on real-row sums of `Phi(k, 1)`.
    pub fn ln_row_sum_floor(&self) -> f64 {
        -(self.nb() as f64) * (self.n as f64).ln()
    }

    /// `ln(8 n^(nb))`, the consensus-bound prefactor.
    pub fn ln_consensus_prefactor(&self) -> f64 {
        8f64.ln() + self.nb() as f64 * (self.n as f64).ln()
    }

    /// `ln c_eps` with `c_eps = 8 n^(nb+1) c b^alpha / (1 - lambda)`, where `c`
    /// bounds the subgradients and `alpha` is the stepsize decay exponent.
    pub fn ln_c_eps(&self, c: f64, alpha: f64) -> f64 {
        8f64.ln() + (self.nb() + 1) as f64 * (self.n as f64).ln() + c.ln() + alpha * (self.b as f64).ln()
            - self.one_minus_lambda().ln()
    }
}

/// Deviation of `Phi(k, t)` from rank one, against the contraction bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhiReport {
    pub k: u64,
    pub t: u64,
    pub deviation: f64,
    pub ln_bound: f64,
    pub within_bound: bool,
}

/// `Phi(k, t) = A~(k) ... A~(t)`.
pub fn phi_product(sys: &AugmentedSystem, k: u64, t: u64) -> Result<Dense> {
    if t == 0 || t > k || k > sys.last_k() {
        return Err(Error::param(format!(
            "need 1 <= t <= k <= {}, got k = {k}, t = {t}",
            sys.last_k()
        )));
    }
    let mut p = Dense::identity(sys.size());
    for s in t..=k {
        p = sys.step(s)?.a.left_mul(&p);
    }
    Ok(p)
}

/// Estimate of `phi(k)`: the mean column of `Phi(k, max(1, k - horizon))`.
pub fn phi_estimate(sys: &AugmentedSystem, k: u64, horizon: u64) -> Result<Vec<f64>> {
    let t = k.saturating_sub(horizon).max(1);
    Ok(phi_product(sys, k, t)?.column_mean())
}

/// Reports `||Phi(k, t) - phi(k) 1^T||_1` for `t = k, k-1, ..., k-depth`.
pub fn phi_deviations(
    sys: &AugmentedSystem,
    consts: &GraphConstants,
    k: u64,
    depth: u64,
    horizon: u64,
) -> Result<Vec<PhiReport>> {
    let phi = phi_estimate(sys, k, horizon)?;
    let mut p = Dense::identity(sys.size());
    let mut out = Vec::new();
    let lowest = k.saturating_sub(depth).max(1);
    let mut t = k;
    loop {
        p = sys.step(t)?.a.right_mul(&p);
        let deviation = p.rank_one_deviation(&phi);
        let ln_bound = consts.ln_bound(k - t);
        out.push(PhiReport {
            k,
            t,
            deviation,
            ln_bound,
            // Relative slack for rounding in the product itself.
            within_bound: deviation.ln() <= ln_bound + 1e-12 || deviation <= 1e-12,
        });
        if t == lowest {
            break;
        }
        t -= 1;
    }
    Ok(out)
}

/// Smallest real-row sum of `Phi(k, 1)` over the real nodes activated at `k`,
/// for every reconstructed `k`, as `(k, min_row_sum)`.
pub fn real_row_sums(sys: &AugmentedSystem) -> Vec<(u64, f64)> {
    let d = sys.size();
    let mut p = Dense::identity(d);
    let mut out = Vec::with_capacity(sys.steps.len());
    for step in &sys.steps {
        p = step.a.left_mul(&p);
        let worst = step
            .activated
            .iter()
            .map(|&i| (0..sys.n).map(|j| p.get(i, j)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        out.push((step.k, worst));
    }
    out
}

/// One row of the consensus series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConsensusPoint {
    pub k: u64,
    /// `max_i |z_i(k+1) - x_bar(k)|` (max over coordinates too).
    pub deviation: f64,
    /// `max_i z_i - min_i z_i` (max over coordinates).
    pub spread: f64,
    /// Right side of the geometric consensus bound, when constants were given.
    pub bound: Option<f64>,
}

/// Consensus of the held estimates around the augmented average.
pub fn consensus_series(sys: &AugmentedSystem, consts: Option<&GraphConstants>) -> Vec<ConsensusPoint> {
    let lambda = consts.map(GraphConstants::lambda);
    let prefactor = consts.map(|c| c.ln_consensus_prefactor().exp());
    // s(k) = lambda^k ||x(1)||_1 + sum_t lambda^(k-t) ||g(t)||_1, by recursion.
    let x1: f64 = sys.x_at(1)[..sys.n * sys.dim].iter().map(|v| v.abs()).sum();
    let mut s = x1;
    let mut out = Vec::with_capacity(sys.steps.len());
    for (idx, step) in sys.steps.iter().enumerate() {
        let k = step.k;
        let xbar = sys.x_bar(k);
        let held = &sys.z_held[idx];
        let mut deviation = 0.0f64;
        let mut spread = 0.0f64;
        for c in 0..sys.dim {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for z in held {
                deviation = deviation.max((z[c] - xbar[c]).abs());
                lo = lo.min(z[c]);
                hi = hi.max(z[c]);
            }
            spread = spread.max(hi - lo);
        }
        let g1: f64 = step.g.iter().flat_map(|(_, g)| g.iter()).map(|v| v.abs()).sum();
        let bound = match (lambda, prefactor) {
            (Some(l), Some(p)) => {
                s = l * s + g1;
                Some(p * s)
            }
            _ => None,
        };
        out.push(ConsensusPoint { k, deviation, spread, bound });
    }
    out
}

/// Fraction of all activations performed by each node.
pub fn update_rates(trace: &Trace, n: usize) -> Vec<f64> {
    let mut counts = vec![0u64; n];
    let mut total = 0u64;
    for r in trace.activations() {
        if r.node < n {
            counts[r.node] += 1;
            total += 1;
        }
    }
    counts
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
    /// Points inside the window dropped for being nonpositive.
    pub filtered: usize,
    /// Slope through the per-bin maxima of log-spaced bins, if requested.
    pub envelope_slope: Option<f64>,
}

/// Least-squares slope of `log y` against `log x` over `x in [lo, hi]`.
/// Nonpositive values are skipped and counted in `filtered`.
pub fn rate_fit(series: &[(f64, f64)], lo: f64, hi: f64, envelope_bins: Option<usize>) -> Result<RateFit> {
    let mut pts = Vec::new();
    let mut filtered = 0;
    for &(x, y) in series {
        if x < lo || x > hi {
            continue;
        }
        if x > 0.0 && y > 0.0 && y.is_finite() {
            pts.push((x.ln(), y.ln()));
        } else {
            filtered += 1;
        }
    }
    let (slope, intercept) = least_squares(&pts)?;
    let envelope_slope = match envelope_bins {
        Some(bins) if bins >= 2 => {
            let (llo, lhi) = (lo.max(f64::MIN_POSITIVE).ln(), hi.ln());
            let width = (lhi - llo) / bins as f64;
            let mut best: Vec<Option<(f64, f64)>> = vec![None; bins];
            for &(lx, ly) in &pts {
                let b = (((lx - llo) / width) as usize).min(bins - 1);
                if best[b].is_none_or(|(_, v)| ly > v) {
                    best[b] = Some((lx, ly));
                }
            }
            let env: Vec<(f64, f64)> = best.into_iter().flatten().collect();
            Some(least_squares(&env)?.0)
        }
        _ => None,
    };
    Ok(RateFit { slope, intercept, points: pts.len(), filtered, envelope_slope })
}

fn least_squares(pts: &[(f64, f64)]) -> Result<(f64, f64)> {
    if pts.len() < 2 {
        return Err(Error::param("rate fit needs at least two positive points"));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::param("rate fit needs distinct abscissae"));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Decay exponent `-2 theta alpha` of squared distances under `rho(k) = k^(-alpha)`.
pub fn theoretical_slope(theta: f64, alpha: f64) -> f64 {
    -2.0 * theta * alpha
}
