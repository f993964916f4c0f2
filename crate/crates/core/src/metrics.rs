//! Embedding quality scores: silhouette, kNN preservation and the Spearman
//! correlation of pairwise distances (CPD).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, MISSING};
use crate::distance::Metric;
use crate::error::{Error, Result};
use crate::neighbors::knn_exact;
use crate::rng;

pub const DEFAULT_KNN_K: usize = 10;
pub const DEFAULT_CPD_PAIRS: usize = 100_000;

/// Mean silhouette of `points` (row-major, `dim` columns) under `labels`.
///
/// Rows labelled [`MISSING`] are ignored. Points in singleton clusters score 0.
pub fn silhouette<S: AsRef<str> + Sync>(points: &[f32], dim: usize, labels: &[S], metric: Metric) -> Result<f64> {
    if dim == 0 || points.len() != labels.len() * dim {
        return Err(Error::Shape(format!(
            "{} values for {} labels of dim {dim}",
            points.len(),
            labels.len()
        )));
    }
    let keep: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].as_ref() != MISSING).collect();
    let mut cluster_of: BTreeMap<&str, usize> = BTreeMap::new();
    for &i in &keep {
        let next = cluster_of.len();
        cluster_of.entry(labels[i].as_ref()).or_insert(next);
    }
    if cluster_of.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "silhouette needs at least 2 clusters, found {}",
            cluster_of.len()
        )));
    }
    if keep.len() < 3 {
        return Err(Error::InsufficientData("silhouette needs at least 3 points".into()));
    }
    let n_clusters = cluster_of.len();
    let assign: Vec<usize> = keep.iter().map(|&i| cluster_of[labels[i].as_ref()]).collect();
    let mut sizes = vec![0usize; n_clusters];
    for &c in &assign {
        sizes[c] += 1;
    }
    let row = |r: usize| &points[keep[r] * dim..(keep[r] + 1) * dim];

    let total: f64 = (0..keep.len())
        .into_par_iter()
        .map(|r| {
            let own = assign[r];
            if sizes[own] <= 1 {
                return 0.0;
            }
            let mut sums = vec![0.0f64; n_clusters];
            let xr = row(r);
            for s in 0..keep.len() {
                if s != r {
                    sums[assign[s]] += metric.distance(xr, row(s));
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..n_clusters)
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .sum();
    Ok(total / keep.len() as f64)
}

/// Fraction of each point's `k` nearest neighbors in `high` that are also
/// among its `k` nearest neighbors in `low`, averaged over points.
pub fn knn_preservation(high: &FeatureMatrix, low: &FeatureMatrix, k: usize, metric: Metric) -> Result<f64> {
    knn_preservation_with(high, metric, low, metric, k)
}

/// [`knn_preservation`] with a separate metric for each space.
pub fn knn_preservation_with(high: &FeatureMatrix, high_metric: Metric, low: &FeatureMatrix, low_metric: Metric, k: usize) -> Result<f64> {
    if high.n_samples() != low.n_samples() || high.ids() != low.ids() {
        return Err(Error::Shape("high and low spaces must hold the same ids in the same order".into()));
    }
    let gh = knn_exact(high, k, high_metric)?;
    let gl = knn_exact(low, k, low_metric)?;
    crate::neighbors::recall(&gl, &gh)
}

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        // Positions start..end hold ranks start+1..=end.
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub rho: f64,
    /// One of the inputs has zero variance; `rho` is reported as 0.
    pub degenerate: bool,
}

fn pearson(xs: &[f64], ys: &[f64]) -> Correlation {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Correlation { rho: 0.0, degenerate: true };
    }
    Correlation {
        rho: (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<Correlation> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!("lengths differ: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientData("spearman needs at least 2 values".into()));
    }
    Ok(pearson(&average_ranks(xs), &average_ranks(ys)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpdScore {
    pub rho: f64,
    pub degenerate: bool,
    /// Pairs actually compared.
    pub n_pairs: usize,
    pub seed: u64,
}

/// Decodes the `p`-th unordered pair `(i, j)`, `i < j`, in row-major order.
fn pair_at(p: usize, n: usize) -> (usize, usize) {
    // Row i starts at offset i*(2n - i - 1)/2.
    let start = |i: usize| i * (2 * n - i - 1) / 2;
    let (mut lo, mut hi) = (0usize, n - 1);
    while lo + 1 < hi {
        let mid = (lo + hi) / 2;
        if start(mid) <= p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let i = lo;
    (i, i + 1 + (p - start(i)))
}

/// Samples up to `n_pairs` distinct unordered pairs, sorted.
pub fn sample_pairs(n: usize, n_pairs: usize, seed: u64) -> Vec<(usize, usize)> {
    let total = n * (n - 1) / 2;
    let mut idx: Vec<usize> = if n_pairs >= total {
        (0..total).collect()
    } else {
        rand::seq::index::sample(&mut rng::seeded(seed), total, n_pairs).into_vec()
    };
    idx.sort_unstable();
    idx.into_iter().map(|p| pair_at(p, n)).collect()
}

/// Spearman correlation between high- and low-dimensional distances over a
/// seeded sample of point pairs.
pub fn cpd(high: &FeatureMatrix, low: &FeatureMatrix, n_pairs: usize, seed: u64, metric: Metric) -> Result<CpdScore> {
    cpd_with(high, low, n_pairs, seed, metric, metric)
}

/// [`cpd`] with a separate metric for each space.
pub fn cpd_with(
    high: &FeatureMatrix,
    low: &FeatureMatrix,
    n_pairs: usize,
    seed: u64,
    high_metric: Metric,
    low_metric: Metric,
) -> Result<CpdScore> {
    let n = high.n_samples();
    if n != low.n_samples() {
        return Err(Error::Shape(format!("{n} high rows vs {} low rows", low.n_samples())));
    }
    if n < 2 {
        return Err(Error::InsufficientData("cpd needs at least 2 points".into()));
    }
    if n_pairs < 2 {
        return Err(Error::invalid("cpd needs at least 2 pairs"));
    }
    let pairs = sample_pairs(n, n_pairs, seed);
    let (dh, dl): (Vec<f64>, Vec<f64>) = pairs
        .par_iter()
        .map(|&(i, j)| {
            (
                high_metric.distance(high.row(i), high.row(j)),
                low_metric.distance(low.row(i), low.row(j)),
            )
        })
        .unzip();
    let c = if dh.len() < 2 {
        Correlation { rho: 0.0, degenerate: true }
    } else {
        spearman(&dh, &dl)?
    };
    Ok(CpdScore {
        rho: c.rho,
        degenerate: c.degenerate,
        n_pairs: pairs.len(),
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnPreservation {
    pub k: usize,
    pub value: f64,
}

/// Scores of one embedding.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    /// Silhouette of the 2-D coordinates per label column.
    pub silhouette: BTreeMap<String, f64>,
    /// Silhouette of the high-dimensional features per label column.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub silhouette_high: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knn_preservation: Option<KnnPreservation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpd: Option<CpdScore>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(values: Vec<f32>, dim: usize) -> FeatureMatrix {
        let n = values.len() / dim;
        FeatureMatrix::new((0..n).map(|i| format!("{i:03}")).collect(), values, dim).unwrap()
    }

    /// Direct evaluation of the silhouette definition, independent of the
    /// per-cluster sum accumulation above.
    fn silhouette_oracle(points: &[[f64; 2]], labels: &[&str]) -> f64 {
        let d = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let mut total = 0.0;
        for i in 0..points.len() {
            let same: Vec<usize> = (0..points.len()).filter(|&j| j != i && labels[j] == labels[i]).collect();
            if same.is_empty() {
                continue;
            }
            let a = same.iter().map(|&j| d(points[i], points[j])).sum::<f64>() / same.len() as f64;
            let mut b = f64::INFINITY;
            let mut others: Vec<&str> = labels.iter().copied().filter(|l| *l != labels[i]).collect();
            others.sort();
            others.dedup();
            for c in others {
                let members: Vec<usize> = (0..points.len()).filter(|&j| labels[j] == c).collect();
                let m = members.iter().map(|&j| d(points[i], points[j])).sum::<f64>() / members.len() as f64;
                b = b.min(m);
            }
            total += (b - a) / a.max(b);
        }
        total / points.len() as f64
    }

    #[test]
    fn silhouette_hand_case() {
        let pts = [0.0, 0.0, 0.0, 2.0, 10.0, 0.0, 10.0, 2.0];
        let labels = ["A", "A", "B", "B"];
        let s = silhouette(&pts, 2, &labels, Metric::Euclidean).unwrap();
        let b = (10.0 + 104f64.sqrt()) / 2.0;
        let expected = (b - 2.0) / b;
        assert!((s - expected).abs() < 1e-12);
        assert!((s - 0.8020).abs() < 1e-4);
    }

    #[test]
    fn silhouette_matches_oracle_on_random_points() {
        let m = crate::neighbors::random_matrix(40, 2, 17);
        let labels: Vec<&str> = (0..40).map(|i| ["x", "y", "z"][i * 7 % 3]).collect();
        let pts: Vec<[f64; 2]> = (0..40).map(|i| [m.row(i)[0] as f64, m.row(i)[1] as f64]).collect();
        let s = silhouette(m.values(), 2, &labels, Metric::Euclidean).unwrap();
        assert!((s - silhouette_oracle(&pts, &labels)).abs() < 1e-12);
    }

    #[test]
    fn interleaved_identical_sets_score_non_positive() {
        let base: Vec<f32> = (0..5).flat_map(|i| [i as f32, (i * i) as f32 * 0.3]).collect();
        let mut pts = base.clone();
        pts.extend_from_slice(&base);
        let labels: Vec<&str> = (0..10).map(|i| if i < 5 { "a" } else { "b" }).collect();
        let s = silhouette(&pts, 2, &labels, Metric::Euclidean).unwrap();
        let p2: Vec<[f64; 2]> = pts.chunks(2).map(|c| [c[0] as f64, c[1] as f64]).collect();
        assert!((s - silhouette_oracle(&p2, &labels)).abs() < 1e-12);
        assert!(s <= 0.0, "{s}");
    }

    #[test]
    fn silhouette_needs_two_clusters() {
        let pts = [0.0, 1.0, 2.0];
        assert!(silhouette(&pts, 1, &["a", "a", "a"], Metric::Euclidean).is_err());
        assert!(silhouette(&pts, 1, &["a", MISSING, MISSING], Metric::Euclidean).is_err());
    }

    #[test]
    fn singletons_score_zero() {
        let pts = [0.0, 1.0, 10.0];
        let s = silhouette(&pts, 1, &["a", "a", "b"], Metric::Euclidean).unwrap();
        // a-points: a=1, b=10 and 9 -> 0.9 and 8/9; b is a singleton -> 0.
        assert!((s - (0.9 + 8.0 / 9.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn knn_preservation_isometry_and_random() {
        let high = crate::neighbors::random_matrix(300, 2, 1);
        let (c, s) = (0.6f64.cos() as f32, 0.6f64.sin() as f32);
        let rotated: Vec<f32> = high
            .values()
            .chunks(2)
            .flat_map(|p| [c * p[0] - s * p[1] + 5.0, s * p[0] + c * p[1] - 2.0])
            .collect();
        let low = FeatureMatrix::new(high.ids().to_vec(), rotated, 2).unwrap();
        assert_eq!(knn_preservation(&high, &low, 10, Metric::Euclidean).unwrap(), 1.0);

        let fresh = crate::neighbors::random_matrix(300, 2, 99);
        let fresh = FeatureMatrix::new(high.ids().to_vec(), fresh.values().to_vec(), 2).unwrap();
        assert!(knn_preservation(&high, &fresh, 10, Metric::Euclidean).unwrap() < 0.1);
    }

    #[test]
    fn knn_preservation_small_and_errors() {
        let a = fm(vec![0.0, 1.0, 5.0], 1);
        let b = fm(vec![0.0, 2.0, 20.0], 1);
        assert_eq!(knn_preservation(&a, &b, 1, Metric::Euclidean).unwrap(), 1.0);
        assert!(knn_preservation(&a, &b, 3, Metric::Euclidean).is_err());
        let c = fm(vec![0.0, 1.0], 1);
        assert!(knn_preservation(&a, &c, 1, Metric::Euclidean).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(average_ranks(&[3.0, 1.0, 2.0]), vec![3.0, 1.0, 2.0]);
    }

    #[test]
    fn spearman_cases() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap().rho - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap().rho + 1.0).abs() < 1e-12);
        let c = spearman(&[5.0, 5.0, 5.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(c, Correlation { rho: 0.0, degenerate: true });
        // Pearson of ranks [1, 2.5, 2.5, 4] and [1, 2, 3, 4]: 4.5 / sqrt(4.5 * 5).
        let tie = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((tie.rho - 4.5 / (22.5f64).sqrt()).abs() < 1e-12);
        assert!((tie.rho - 0.9487).abs() < 1e-4);
        assert!(spearman(&[1.0], &[1.0]).is_err());
        assert!(spearman(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn pair_decoding_enumerates_all_pairs() {
        for n in 2..9 {
            let all = sample_pairs(n, usize::MAX, 0);
            let mut expected = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    expected.push((i, j));
                }
            }
            assert_eq!(all, expected);
        }
        let some = sample_pairs(100, 500, 3);
        assert_eq!(some.len(), 500);
        let mut dedup = some.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 500);
        assert!(some.iter().all(|&(i, j)| i < j && j < 100));
    }

    #[test]
    fn cpd_of_scaled_copy_is_one() {
        let high = crate::neighbors::random_matrix(200, 4, 5);
        let scaled: Vec<f32> = high.values().iter().map(|v| v * 3.0).collect();
        let low = FeatureMatrix::new(high.ids().to_vec(), scaled, 4).unwrap();
        let s = cpd(&high, &low, 1000, 1, Metric::Euclidean).unwrap();
        assert!((s.rho - 1.0).abs() < 1e-12);
        assert_eq!(s.n_pairs, 1000);
        let one = fm(vec![1.0], 1);
        assert!(cpd(&one, &one, 10, 0, Metric::Euclidean).is_err());
    }
}
