//! Fit of the low-dimensional membership curve `1 / (1 + a * d^(2b))`.

use crate::error::{Error, Result};

pub const CURVE_SAMPLES: usize = 300;

#[inline]
pub fn membership(d: f64, a: f64, b: f64) -> f64 {
    1.0 / (1.0 + a * d.powf(2.0 * b))
}

/// Target curve: 1 up to `min_dist`, then exponential decay with `spread`.
pub fn target(d: f64, min_dist: f64, spread: f64) -> f64 {
    if d <= min_dist {
        1.0
    } else {
        (-(d - min_dist) / spread).exp()
    }
}

/// The 300 evenly spaced fit points on `[0, 3 * spread]`, endpoints included.
pub fn fit_grid(spread: f64) -> Vec<f64> {
    let hi = 3.0 * spread;
    (0..CURVE_SAMPLES)
        .map(|i| hi * i as f64 / (CURVE_SAMPLES - 1) as f64)
        .collect()
}

fn sse(xs: &[f64], ys: &[f64], a: f64, b: f64) -> f64 {
    xs.iter().zip(ys).map(|(&x, &y)| (membership(x, a, b) - y).powi(2)).sum()
}

/// Least-squares `(a, b)` for the given `min_dist` and `spread`
/// (Levenberg-Marquardt from `a = b = 1`).
pub fn fit_ab(min_dist: f64, spread: f64) -> Result<(f64, f64)> {
    if !(min_dist.is_finite() && spread.is_finite()) || min_dist < 0.0 || spread <= 0.0 || min_dist >= spread {
        return Err(Error::invalid(format!(
            "need 0 <= min_dist < spread, got min_dist={min_dist}, spread={spread}"
        )));
    }
    let xs = fit_grid(spread);
    let ys: Vec<f64> = xs.iter().map(|&x| target(x, min_dist, spread)).collect();

    let (mut a, mut b) = (1.0f64, 1.0f64);
    let mut cost = sse(&xs, &ys, a, b);
    let mut lambda = 1e-3;
    for _ in 0..1000 {
        // Normal equations of the Gauss-Newton step.
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(&ys) {
            if x <= 0.0 {
                continue;
            }
            let p = x.powf(2.0 * b);
            let denom = 1.0 + a * p;
            let r = 1.0 / denom - y;
            let da = -p / (denom * denom);
            let db = -a * p * 2.0 * x.ln() / (denom * denom);
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ga += da * r;
            gb += db * r;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let (maa, mbb) = (jaa * (1.0 + lambda), jbb * (1.0 + lambda));
            let det = maa * mbb - jab * jab;
            if det.abs() < f64::MIN_POSITIVE {
                lambda *= 10.0;
                continue;
            }
            let step_a = -(mbb * ga - jab * gb) / det;
            let step_b = -(maa * gb - jab * ga) / det;
            let (na, nb) = (a + step_a, b + step_b);
            if na > 0.0 && nb > 0.0 {
                let c = sse(&xs, &ys, na, nb);
                if c < cost {
                    let rel = (cost - c) / cost.max(f64::MIN_POSITIVE);
                    a = na;
                    b = nb;
                    cost = c;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = rel > 1e-15;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_parameters_fit() {
        let (a, b) = fit_ab(0.1, 1.0).unwrap();
        assert!((1.50..=1.65).contains(&a), "a = {a}");
        assert!((0.85..=0.95).contains(&b), "b = {b}");
        assert_eq!(membership(0.0, a, b), 1.0);
    }

    #[test]
    fn rejects_invalid_ranges() {
        assert!(fit_ab(-0.1, 1.0).is_err());
        assert!(fit_ab(1.0, 1.0).is_err());
        assert!(fit_ab(0.5, 0.0).is_err());
    }

    #[test]
    fn grid_has_300_points() {
        let g = fit_grid(1.0);
        assert_eq!(g.len(), 300);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[299], 3.0);
    }
}
