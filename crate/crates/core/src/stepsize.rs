//! Stepsize schedules `rho(k)` and their cached prefix sums.
//!
//! Adaptive stepsizes sum `rho` over index windows `[from, to]`. Long windows
//! are answered as a difference of two prefix sums; each prefix is held as an
//! unevaluated sum `hi + lo` produced by compensated summation, so differences
//! of large prefixes keep close to full precision.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// Windows at most this long are summed directly.
const DIRECT_WINDOW: u64 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepsizeKind {
    /// `scale * k^(-alpha)`.
    Power,
    /// `scale`.
    Constant,
}

/// JSON form of a schedule: `{"kind": "power", "scale": 1.0, "alpha": 0.6}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepsizeSpec {
    pub kind: StepsizeKind,
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl StepsizeSpec {
    pub fn power(scale: f64, alpha: f64) -> Self {
        Self { kind: StepsizeKind::Power, scale, alpha: Some(alpha) }
    }

    pub fn constant(scale: f64) -> Self {
        Self { kind: StepsizeKind::Constant, scale, alpha: None }
    }

    pub fn build(&self) -> Result<StepsizeSchedule> {
        StepsizeSchedule::new(*self)
    }
}

#[derive(Clone, Debug, Default)]
struct PrefixCache {
    // hi[k] + lo[k] = sum_{t=1..k} rho(t); index 0 is the empty sum.
    hi: Vec<f64>,
    lo: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct StepsizeSchedule {
    spec: StepsizeSpec,
    cache: RefCell<PrefixCache>,
}

impl StepsizeSchedule {
    pub fn new(spec: StepsizeSpec) -> Result<Self> {
        if !(spec.scale > 0.0) || !spec.scale.is_finite() {
            return Err(Error::param(format!("stepsize scale must be positive, got {}", spec.scale)));
        }
        if spec.kind == StepsizeKind::Power {
            match spec.alpha {
                Some(a) if a > 0.0 && a <= 1.0 => {}
                other => {
                    return Err(Error::param(format!(
                        "power schedule needs alpha in (0, 1], got {other:?}"
                    )))
                }
            }
        }
        Ok(Self {
            spec,
            cache: RefCell::new(PrefixCache { hi: vec![0.0], lo: vec![0.0] }),
        })
    }

    pub fn spec(&self) -> StepsizeSpec {
        self.spec
    }

    /// True for schedules with `sum rho = inf` and `sum rho^2 < inf`.
    pub fn is_square_summable_divergent(&self) -> bool {
        matches!((self.spec.kind, self.spec.alpha), (StepsizeKind::Power, Some(a)) if a > 0.5)
    }

    pub fn rho(&self, k: u64) -> Result<f64> {
        if k < 1 {
            return Err(Error::param("stepsize index starts at 1"));
        }
        Ok(self.rho_unchecked(k))
    }

    fn rho_unchecked(&self, k: u64) -> f64 {
        match self.spec.kind {
            StepsizeKind::Constant => self.spec.scale,
            StepsizeKind::Power => {
                let alpha = self.spec.alpha.unwrap_or(1.0);
                if alpha == 1.0 {
                    self.spec.scale / k as f64
                } else {
                    self.spec.scale * (k as f64).powf(-alpha)
                }
            }
        }
    }

    /// `P(k) = sum_{t=1..k} rho(t)`.
    pub fn prefix(&self, k: u64) -> f64 {
        let (hi, lo) = self.prefix_parts(k);
        hi + lo
    }

    fn prefix_parts(&self, k: u64) -> (f64, f64) {
        if self.spec.kind == StepsizeKind::Constant {
            return (self.spec.scale * k as f64, 0.0);
        }
        let mut cache = self.cache.borrow_mut();
        let have = cache.hi.len() as u64 - 1;
        if k > have {
            // Grow at least geometrically so repeated small extensions stay cheap.
            let target = k.max(have.saturating_mul(2)).max(1024);
            let extra = (target - have) as usize;
            cache.hi.reserve(extra);
            cache.lo.reserve(extra);
            let (mut sum, mut comp) = (cache.hi[have as usize], cache.lo[have as usize]);
            for t in have + 1..=target {
                // Neumaier summation.
                let v = self.rho_unchecked(t);
                let s = sum + v;
                if sum.abs() >= v.abs() {
                    comp += (sum - s) + v;
                } else {
                    comp += (v - s) + sum;
                }
                sum = s;
                cache.hi.push(sum);
                cache.lo.push(comp);
            }
        }
        (cache.hi[k as usize], cache.lo[k as usize])
    }

    /// `sum_{t=from..=to} rho(t)`; zero when `to < from`.
    pub fn window_sum(&self, from: u64, to: u64) -> Result<f64> {
        if from < 1 {
            return Err(Error::param("stepsize window must start at index >= 1"));
        }
        if to < from {
            return Ok(0.0);
        }
        if self.spec.kind == StepsizeKind::Constant {
            return Ok(self.spec.scale * (to - from + 1) as f64);
        }
        if to - from < DIRECT_WINDOW {
            return Ok((from..=to).map(|t| self.rho_unchecked(t)).sum());
        }
        let (hi_b, lo_b) = self.prefix_parts(to);
        let (hi_a, lo_a) = self.prefix_parts(from - 1);
        Ok((hi_b - hi_a) + (lo_b - lo_a))
    }

    /// Grows the prefix cache up to `k` ahead of time.
    pub fn warm(&self, k: u64) {
        let _ = self.prefix_parts(k);
    }
}

/// Cumulative-stepsize normalizer `s(k)` for `rho(k) = k^(-alpha)`:
/// `(k^(1-alpha) - 1) / (1 - alpha)` for `alpha` in (0.5, 1), `ln k` for `alpha = 1`.
pub fn rate_normalizer_s(alpha: f64, k: f64) -> Result<f64> {
    if !(alpha > 0.5 && alpha <= 1.0) {
        return Err(Error::param(format!("s(k) needs alpha in (0.5, 1], got {alpha}")));
    }
    if !(k >= 1.0) {
        return Err(Error::param(format!("s(k) needs k >= 1, got {k}")));
    }
    if alpha == 1.0 {
        Ok(k.ln())
    } else {
        Ok((k.powf(1.0 - alpha) - 1.0) / (1.0 - alpha))
    }
}
