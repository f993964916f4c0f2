//! Per-point bandwidth calibration and the symmetrized fuzzy graph.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neighbors::KnnGraph;

pub const BANDWIDTH_ITERATIONS: usize = 64;
pub const BANDWIDTH_TOLERANCE: f64 = 1e-5;
/// Lower bound on sigma as a fraction of the mean neighbor distance.
pub const MIN_SIGMA_SCALE: f64 = 1e-3;
/// Absolute floor so sigma stays positive for all-zero rows.
const MIN_SIGMA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidth {
    /// Smallest positive neighbor distance (0 if there is none).
    pub rho: f64,
    pub sigma: f64,
    /// The search ended below the floor and sigma was raised to it.
    pub clamped: bool,
}

impl Bandwidth {
    #[inline]
    pub fn weight(&self, d: f64) -> f64 {
        let excess = d - self.rho;
        if excess <= 0.0 {
            1.0
        } else {
            (-excess / self.sigma).exp()
        }
    }

    pub fn membership_sum(&self, distances: &[f64]) -> f64 {
        distances.iter().map(|&d| self.weight(d)).sum()
    }
}

/// Finds `rho` and `sigma` for one row of ascending neighbor distances so
/// that the memberships sum to `log2(k)`.
pub fn smooth_knn(distances: &[f64]) -> Result<Bandwidth> {
    let k = distances.len();
    if k < 2 {
        return Err(Error::invalid(format!("smooth_knn needs at least 2 distances, got {k}")));
    }
    if distances.iter().any(|d| !d.is_finite() || *d < 0.0) || distances.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("distances must be finite, non-negative and ascending"));
    }
    let target = (k as f64).log2();
    let rho = distances.iter().copied().find(|&d| d > 0.0).unwrap_or(0.0);
    let mean = distances.iter().sum::<f64>() / k as f64;
    let floor = (MIN_SIGMA_SCALE * mean).max(MIN_SIGMA);

    let sum_at = |sigma: f64| Bandwidth { rho, sigma, clamped: false }.membership_sum(distances);
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut mid = if mean > 0.0 { mean } else { 1.0 };
    for _ in 0..BANDWIDTH_ITERATIONS {
        let s = sum_at(mid);
        if (s - target).abs() < BANDWIDTH_TOLERANCE {
            break;
        }
        if s > target {
            hi = mid;
            mid = (lo + hi) / 2.0;
        } else {
            lo = mid;
            mid = if hi.is_infinite() { mid * 2.0 } else { (lo + hi) / 2.0 };
        }
    }
    if mid < floor {
        return Ok(Bandwidth {
            rho,
            sigma: floor,
            clamped: true,
        });
    }
    Ok(Bandwidth {
        rho,
        sigma: mid,
        clamped: false,
    })
}

/// `a + b - a*b`: membership of an edge present in either direction.
#[inline]
pub fn probabilistic_union(a: f64, b: f64) -> f64 {
    a + b - a * b
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuzzyEdge {
    pub i: u32,
    pub j: u32,
    pub weight: f64,
}

/// Undirected weighted graph, one edge per unordered pair with `i < j`,
/// sorted by `(i, j)`. Weights lie in `(0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyGraph {
    pub n: usize,
    pub edges: Vec<FuzzyEdge>,
}

impl FuzzyGraph {
    pub fn max_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.weight).fold(0.0, f64::max)
    }
}

pub fn bandwidths(g: &KnnGraph) -> Result<Vec<Bandwidth>> {
    (0..g.n()).into_par_iter().map(|i| smooth_knn(g.row_distances(i))).collect()
}

pub fn fuzzy_graph(g: &KnnGraph) -> Result<FuzzyGraph> {
    g.check()?;
    let n = g.n();
    let bw = bandwidths(g)?;

    // (low, high, weight, low_is_source)
    let mut directed: Vec<(u32, u32, f64, bool)> = Vec::with_capacity(n * g.k);
    for (i, b) in bw.iter().enumerate() {
        for (&j, &d) in g.neighbors(i).iter().zip(g.row_distances(i)) {
            let w = b.weight(d);
            let i = i as u32;
            if i < j {
                directed.push((i, j, w, true));
            } else {
                directed.push((j, i, w, false));
            }
        }
    }
    directed.sort_unstable_by(|a, b| (a.0, a.1, !a.3).cmp(&(b.0, b.1, !b.3)));

    let mut edges = Vec::with_capacity(directed.len());
    let mut idx = 0;
    while idx < directed.len() {
        let (i, j, w, _) = directed[idx];
        let weight = if idx + 1 < directed.len() && directed[idx + 1].0 == i && directed[idx + 1].1 == j {
            idx += 2;
            probabilistic_union(w, directed[idx - 1].2)
        } else {
            idx += 1;
            w
        };
        if weight > 0.0 {
            edges.push(FuzzyEdge {
                i,
                j,
                weight: weight.min(1.0),
            });
        }
    }
    Ok(FuzzyGraph { n, edges })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::Metric;

    #[test]
    fn one_two_three_matches_quadratic() {
        // 1 + t + t^2 = log2(3) with t = exp(-1/sigma).
        let c = 3f64.log2() - 1.0;
        let t = (-1.0 + (1.0 + 4.0 * c).sqrt()) / 2.0;
        let sigma_oracle = -1.0 / t.ln();
        let b = smooth_knn(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(b.rho, 1.0);
        assert!((b.sigma - sigma_oracle).abs() < 1e-4, "{} vs {sigma_oracle}", b.sigma);
        assert!((b.sigma - 1.1334).abs() < 1e-3);
        assert!(!b.clamped);
    }

    #[test]
    fn all_equal_to_rho_clamps() {
        let b = smooth_knn(&[2.0; 5]).unwrap();
        assert_eq!(b.rho, 2.0);
        assert!(b.clamped);
        assert!((b.sigma - 2e-3).abs() < 1e-15);
        assert!(b.membership_sum(&[2.0; 5]) == 5.0);
    }

    #[test]
    fn all_zero_row_is_degenerate_but_finite() {
        let b = smooth_knn(&[0.0; 4]).unwrap();
        assert_eq!(b.rho, 0.0);
        assert!(b.clamped && b.sigma > 0.0);
        assert_eq!(b.weight(0.0), 1.0);
    }

    #[test]
    fn far_second_neighbor() {
        let d = [1.0, 1e9];
        let b = smooth_knn(&d).unwrap();
        assert!((b.membership_sum(&d) - 1.0).abs() < 1e-5);
        assert!(b.weight(1e9) < 1e-5);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(smooth_knn(&[1.0]).is_err());
        assert!(smooth_knn(&[2.0, 1.0]).is_err());
        assert!(smooth_knn(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn union_formula() {
        assert_eq!(probabilistic_union(1.0, 0.0), 1.0);
        assert_eq!(probabilistic_union(0.5, 0.5), 0.75);
        assert_eq!(probabilistic_union(0.3, 0.6), probabilistic_union(0.6, 0.3));
    }

    #[test]
    fn fuzzy_graph_invariants() {
        let m = crate::neighbors::random_matrix(200, 5, 4);
        let g = crate::neighbors::knn_exact(&m, 10, Metric::Euclidean).unwrap();
        let fg = fuzzy_graph(&g).unwrap();
        assert_eq!(fg.n, 200);
        let mut seen = std::collections::HashSet::new();
        for e in &fg.edges {
            assert!(e.i < e.j);
            assert!(e.weight > 0.0 && e.weight <= 1.0);
            assert!(seen.insert((e.i, e.j)));
        }
        // Every point's nearest neighbor has directed weight 1, so its edge is 1.
        for i in 0..200u32 {
            let j = g.neighbors(i as usize)[0];
            let (a, b) = (i.min(j), i.max(j));
            let e = fg.edges.iter().find(|e| e.i == a && e.j == b).unwrap();
            assert!((e.weight - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn union_of_one_sided_edge() {
        // Three collinear points, k = 2: every pair appears, at least in one direction.
        let m = crate::FeatureMatrix::new(vec!["a".into(), "b".into(), "c".into()], vec![0.0, 1.0, 3.0], 1).unwrap();
        let g = crate::neighbors::knn_exact(&m, 2, Metric::Euclidean).unwrap();
        let fg = fuzzy_graph(&g).unwrap();
        let bw = bandwidths(&g).unwrap();
        let w = |i: usize, d: f64| bw[i].weight(d);
        let expect_ac = probabilistic_union(w(0, 3.0), w(2, 3.0));
        let ac = fg.edges.iter().find(|e| e.i == 0 && e.j == 2).unwrap();
        assert!((ac.weight - expect_ac).abs() < 1e-15);
    }
}
