//! Synthetic datasets and the centralized reference optimum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::objective::{total_subgradient, total_value, ObjectiveSpec};

/// Noisy linearly separable multiclass data: a random `n_f x n_c` weight
/// matrix `W`, features `s ~ N(0, I)` and `label = argmax(W^T s + 0.5 e)`
/// with `e ~ N(0, I)`. Same seed, same rows.
pub fn synthetic_dataset(n_s: usize, n_f: usize, n_c: usize, seed: u64) -> Result<crate::objective::Dataset> {
    if n_s == 0 || n_f == 0 {
        return Err(Error::param("n_s and n_f must be positive"));
    }
    if n_c < 2 {
        return Err(Error::param("a classification dataset needs at least 2 classes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<Vec<f64>> = (0..n_c)
        .map(|_| (0..n_f).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let mut features = Vec::with_capacity(n_s);
    let mut labels = Vec::with_capacity(n_s);
    for _ in 0..n_s {
        let s: Vec<f64> = (0..n_f).map(|_| rng.sample(StandardNormal)).collect();
        let mut best = (0, f64::NEG_INFINITY);
        for (c, wc) in w.iter().enumerate() {
            let noise: f64 = rng.sample(StandardNormal);
            let score = wc.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() + 0.5 * noise;
            if score > best.1 {
                best = (c, score);
            }
        }
        features.push(s);
        labels.push(best.0);
    }
    crate::objective::Dataset::new(features, labels, n_c)
}

/// Smallest value of `sum_i f_i` found by a centralized method run for at
/// most `iterations` steps from the origin.
///
/// Smooth sums (logistic and quadratic parts only) use Nesterov's method
/// with step `1/L` and gradient restarts, stopping once the gradient
/// vanishes. Anything nonsmooth falls back to the subgradient method with
/// step `1 / (G sqrt(k))`.
pub fn centralized_f_star(objs: &[ObjectiveSpec], iterations: u64) -> Result<f64> {
    let dim = objs.first().map_or(0, ObjectiveSpec::dim);
    if dim == 0 {
        return Err(Error::param("no objective to minimize"));
    }
    let smooth = objs
        .iter()
        .all(|o| matches!(o, ObjectiveSpec::Logistic { .. } | ObjectiveSpec::Quadratic { .. }));
    let x0 = vec![0.0; dim];
    let mut best = total_value(objs, &x0)?;
    if smooth {
        let lip: f64 = objs.iter().map(smoothness).sum::<f64>().max(f64::MIN_POSITIVE);
        let step = 1.0 / lip;
        let (mut x, mut y) = (x0.clone(), x0);
        let mut theta = 1.0f64;
        let mut f_prev = best;
        for _ in 0..iterations {
            let g = total_subgradient(objs, &y)?;
            let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gnorm <= 1e-10 * (1.0 + best.abs()) {
                break;
            }
            let x_next: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            let f = total_value(objs, &x_next)?;
            best = best.min(f);
            let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            let momentum = if f > f_prev { 0.0 } else { (theta - 1.0) / theta_next };
            theta = if f > f_prev { 1.0 } else { theta_next };
            y = x_next.iter().zip(&x).map(|(a, b)| a + momentum * (a - b)).collect();
            x = x_next;
            f_prev = f;
        }
    } else {
        let lip: f64 = objs.iter().map(|o| o.subgradient_bound(1.0)).sum::<f64>().max(f64::MIN_POSITIVE);
        let mut x = x0;
        for k in 1..=iterations {
            let g = total_subgradient(objs, &x)?;
            let step = 1.0 / (lip * (k as f64).sqrt());
            for (a, b) in x.iter_mut().zip(&g) {
                *a -= step * b;
            }
            best = best.min(total_value(objs, &x)?);
        }
    }
    Ok(best)
}

/// Gradient Lipschitz constant of a smooth part.
fn smoothness(o: &ObjectiveSpec) -> f64 {
    match o {
        ObjectiveSpec::Quadratic { weight, .. } => weight.abs(),
        ObjectiveSpec::Logistic { data, gamma } => {
            0.5 * data.features().iter().map(|s| s.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() + gamma
        }
        _ => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn synthetic_shape_and_determinism() {
        let a = synthetic_dataset(200, 4, 3, 7).unwrap();
        let b = synthetic_dataset(200, 4, 3, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 200);
        assert!(a.labels().iter().all(|&l| l < 3));
        // Every class shows up with this many rows.
        for c in 0..3 {
            assert!(a.labels().contains(&c));
        }
        assert!(synthetic_dataset(10, 2, 1, 0).is_err());
        assert_ne!(a, synthetic_dataset(200, 4, 3, 8).unwrap());
    }

    #[test]
    fn quadratic_optimum_is_found() {
        let objs = vec![ObjectiveSpec::quadratic(-1.0), ObjectiveSpec::quadratic(2.0)];
        let f = centralized_f_star(&objs, 1000).unwrap();
        assert!((f - 2.25).abs() < 1e-9);
    }

    #[test]
    fn abs_optimum_is_approached() {
        let objs = vec![ObjectiveSpec::abs(-1.0), ObjectiveSpec::abs(0.0), ObjectiveSpec::abs(2.0)];
        let f = centralized_f_star(&objs, 20_000).unwrap();
        assert!((3.0..3.0 + 1e-3).contains(&f), "{f}");
    }

    #[test]
    fn logistic_gradient_vanishes_at_the_estimate() {
        let data = Arc::new(synthetic_dataset(300, 3, 3, 1).unwrap());
        let objs = vec![ObjectiveSpec::logistic(data, 1.0)];
        let f = centralized_f_star(&objs, 20_000).unwrap();
        let f_long = centralized_f_star(&objs, 40_000).unwrap();
        let f_short = centralized_f_star(&objs, 50).unwrap();
        assert!(f <= f_short);
        assert!((f - f_long).abs() <= 1e-9 * f);
    }
}
