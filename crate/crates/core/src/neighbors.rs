//! k-nearest-neighbor graphs: exact brute force and NN-descent.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::distance::Metric;
use crate::error::{Error, Result};
use crate::rng;

/// Above this many samples [`knn`] switches from brute force to NN-descent.
pub const EXACT_THRESHOLD: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnGraph {
    pub k: usize,
    /// Row-major `n x k`.
    pub indices: Vec<u32>,
    /// Row-major `n x k`, ascending within each row.
    pub distances: Vec<f64>,
    pub metric: Metric,
}

impl KnnGraph {
    pub fn n(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.indices.len() / self.k
        }
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn row_distances(&self, i: usize) -> &[f64] {
        &self.distances[i * self.k..(i + 1) * self.k]
    }

    /// Checks the graph invariants: no self loops, sorted finite distances.
    pub fn check(&self) -> Result<()> {
        let n = self.n();
        if self.indices.len() != n * self.k || self.distances.len() != n * self.k {
            return Err(Error::Shape("knn graph arrays disagree".into()));
        }
        for i in 0..n {
            let d = self.row_distances(i);
            if self.neighbors(i).iter().any(|&j| j as usize == i || j as usize >= n) {
                return Err(Error::Shape(format!("row {i} has a self loop or bad index")));
            }
            if d.iter().any(|x| !x.is_finite() || *x < 0.0) || d.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::Shape(format!("row {i} distances are not sorted/finite")));
            }
        }
        Ok(())
    }
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("k = {k} out of range for {n} samples (need 1 <= k <= n - 1)")));
    }
    Ok(())
}

#[inline]
fn closer(a: (f64, u32), b: (f64, u32)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

fn rows_to_graph(rows: Vec<Vec<(f64, u32)>>, k: usize, metric: Metric) -> KnnGraph {
    let mut indices = Vec::with_capacity(rows.len() * k);
    let mut distances = Vec::with_capacity(rows.len() * k);
    for row in rows {
        for (d, j) in row {
            indices.push(j);
            distances.push(d);
        }
    }
    KnnGraph {
        k,
        indices,
        distances,
        metric,
    }
}

/// Exact neighbors; distance ties go to the lower index.
pub fn knn_exact(m: &FeatureMatrix, k: usize, metric: Metric) -> Result<KnnGraph> {
    let n = m.n_samples();
    check_k(n, k)?;
    let rows: Vec<Vec<(f64, u32)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = m.row(i);
            let mut cands: Vec<(f64, u32)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (metric.distance(xi, m.row(j)), j as u32))
                .collect();
            if k < cands.len() {
                cands.select_nth_unstable_by(k - 1, |a, b| closer(*a, *b));
                cands.truncate(k);
            }
            cands.sort_unstable_by(|a, b| closer(*a, *b));
            cands
        })
        .collect();
    Ok(rows_to_graph(rows, k, metric))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentConfig {
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once fewer than `delta * n * k` entries change in an iteration.
    pub delta: f64,
    /// Candidate pool per node; `None` means `k`.
    pub max_candidates: Option<usize>,
    /// Compute local joins on the rayon pool. Updates are still applied in
    /// node order, so the graph is the same either way.
    pub parallel: bool,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_iters: 10,
            delta: 0.001,
            max_candidates: None,
            parallel: false,
        }
    }
}

#[derive(Clone, Copy)]
struct Entry {
    dist: f64,
    idx: u32,
    is_new: bool,
}

/// Bounded sorted neighbor list of one node.
struct Heap {
    items: Vec<Entry>,
}

impl Heap {
    fn worst(&self, k: usize) -> (f64, u32) {
        if self.items.len() < k {
            (f64::INFINITY, u32::MAX)
        } else {
            let e = self.items[self.items.len() - 1];
            (e.dist, e.idx)
        }
    }

    fn push(&mut self, dist: f64, idx: u32, k: usize) -> bool {
        if closer((dist, idx), self.worst(k)) != std::cmp::Ordering::Less {
            return false;
        }
        if self.items.iter().any(|e| e.idx == idx) {
            return false;
        }
        let pos = self
            .items
            .partition_point(|e| closer((e.dist, e.idx), (dist, idx)) == std::cmp::Ordering::Less);
        self.items.insert(pos, Entry { dist, idx, is_new: true });
        if self.items.len() > k {
            self.items.pop();
        }
        true
    }
}

fn take_sample(v: &mut Vec<u32>, max: usize, rng: &mut rng::Rng) {
    if v.len() > max {
        v.shuffle(rng);
        v.truncate(max);
    }
}

/// Approximate neighbors by neighbor-of-neighbor refinement from a seeded
/// random graph.
pub fn knn_descent(m: &FeatureMatrix, k: usize, metric: Metric, cfg: &DescentConfig) -> Result<KnnGraph> {
    let n = m.n_samples();
    check_k(n, k)?;
    let pool = cfg.max_candidates.unwrap_or(k).max(1);
    let mut rng = rng::seeded(cfg.seed);
    let dist = |a: usize, b: usize| metric.distance(m.row(a), m.row(b));

    let mut heaps: Vec<Heap> = (0..n)
        .map(|_| Heap {
            items: Vec::with_capacity(k + 1),
        })
        .collect();
    for (i, heap) in heaps.iter_mut().enumerate() {
        // k distinct random neighbors other than i.
        let picks = rand::seq::index::sample(&mut rng, n - 1, k);
        for p in picks.iter() {
            let j = if p >= i { p + 1 } else { p };
            heap.push(dist(i, j), j as u32, k);
        }
    }

    for iter in 0..cfg.max_iters {
        let mut new_c: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut old_c: Vec<Vec<u32>> = vec![Vec::new(); n];
        for i in 0..n {
            for e in heaps[i].items.iter_mut() {
                if e.is_new {
                    new_c[i].push(e.idx);
                } else {
                    old_c[i].push(e.idx);
                }
            }
            take_sample(&mut new_c[i], pool, &mut rng);
            for e in heaps[i].items.iter_mut() {
                if new_c[i].contains(&e.idx) {
                    e.is_new = false;
                }
            }
        }
        let mut new_rev: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut old_rev: Vec<Vec<u32>> = vec![Vec::new(); n];
        for i in 0..n {
            for &j in &new_c[i] {
                new_rev[j as usize].push(i as u32);
            }
            for &j in &old_c[i] {
                old_rev[j as usize].push(i as u32);
            }
        }
        for i in 0..n {
            take_sample(&mut new_rev[i], pool, &mut rng);
            take_sample(&mut old_rev[i], pool, &mut rng);
            new_c[i].append(&mut new_rev[i]);
            new_c[i].sort_unstable();
            new_c[i].dedup();
            old_c[i].append(&mut old_rev[i]);
            old_c[i].sort_unstable();
            old_c[i].dedup();
        }

        let thresholds: Vec<(f64, u32)> = heaps.iter().map(|h| h.worst(k)).collect();
        let join = |i: usize| -> Vec<(u32, u32, f64)> {
            let news = &new_c[i];
            let olds = &old_c[i];
            let mut out = Vec::new();
            let mut consider = |a: u32, b: u32| {
                let d = dist(a as usize, b as usize);
                let less = |t: (f64, u32), idx: u32| closer((d, idx), t) == std::cmp::Ordering::Less;
                if less(thresholds[a as usize], b) || less(thresholds[b as usize], a) {
                    out.push((a, b, d));
                }
            };
            for (x, &a) in news.iter().enumerate() {
                for &b in &news[x + 1..] {
                    consider(a, b);
                }
                for &b in olds {
                    if a != b {
                        consider(a, b);
                    }
                }
            }
            out
        };
        let proposals: Vec<Vec<(u32, u32, f64)>> = if cfg.parallel {
            (0..n).into_par_iter().map(join).collect()
        } else {
            (0..n).map(join).collect()
        };

        let mut updates = 0usize;
        for (a, b, d) in proposals.into_iter().flatten() {
            updates += heaps[a as usize].push(d, b, k) as usize;
            updates += heaps[b as usize].push(d, a, k) as usize;
        }
        log::debug!("nn-descent iteration {iter}: {updates} updates");
        if (updates as f64) < cfg.delta * (n * k) as f64 {
            break;
        }
    }

    // A self-consistent random start always fills every list, so each heap
    // holds exactly k entries here.
    let rows = heaps
        .into_iter()
        .map(|h| h.items.into_iter().map(|e| (e.dist, e.idx)).collect())
        .collect();
    Ok(rows_to_graph(rows, k, metric))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnnMethod {
    /// Exact up to [`EXACT_THRESHOLD`] samples, NN-descent above.
    #[default]
    Auto,
    Exact,
    Descent,
}

pub fn knn(m: &FeatureMatrix, k: usize, metric: Metric, method: KnnMethod, cfg: &DescentConfig) -> Result<KnnGraph> {
    let exact = match method {
        KnnMethod::Exact => true,
        KnnMethod::Descent => false,
        KnnMethod::Auto => m.n_samples() <= EXACT_THRESHOLD,
    };
    if exact {
        knn_exact(m, k, metric)
    } else {
        knn_descent(m, k, metric, cfg)
    }
}

/// Mean over rows of `|approx(i) ∩ exact(i)| / k`.
pub fn recall(approx: &KnnGraph, exact: &KnnGraph) -> Result<f64> {
    if approx.k != exact.k || approx.n() != exact.n() {
        return Err(Error::Shape(format!(
            "graphs differ: n={} k={} vs n={} k={}",
            approx.n(),
            approx.k,
            exact.n(),
            exact.k
        )));
    }
    let n = approx.n();
    if n == 0 {
        return Ok(1.0);
    }
    let k = approx.k;
    let hits: usize = (0..n)
        .map(|i| {
            let truth = exact.neighbors(i);
            approx.neighbors(i).iter().filter(|j| truth.contains(j)).count()
        })
        .sum();
    Ok(hits as f64 / (n * k) as f64)
}

/// Random `n`-row, `dim`-column matrix with entries uniform in [-1, 1).
#[doc(hidden)]
pub fn random_matrix(n: usize, dim: usize, seed: u64) -> FeatureMatrix {
    let mut rng = rng::seeded(seed);
    let values = (0..n * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    FeatureMatrix::new((0..n).map(|i| format!("p{i:06}")).collect(), values, dim).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f32]) -> FeatureMatrix {
        FeatureMatrix::new(
            (0..points.len()).map(|i| i.to_string()).collect(),
            points.to_vec(),
            1,
        )
        .unwrap()
    }

    #[test]
    fn exact_on_a_line() {
        let g = knn_exact(&line(&[0.0, 1.0, 10.0]), 1, Metric::Euclidean).unwrap();
        assert_eq!(g.indices, vec![1, 0, 1]);
        assert_eq!(g.distances, vec![1.0, 1.0, 9.0]);
        g.check().unwrap();
    }

    #[test]
    fn exact_k_is_n_minus_one() {
        let m = random_matrix(7, 3, 1);
        let g = knn_exact(&m, 6, Metric::Euclidean).unwrap();
        for i in 0..7 {
            let mut row: Vec<u32> = g.neighbors(i).to_vec();
            row.sort_unstable();
            let expected: Vec<u32> = (0..7).filter(|&j| j != i as u32).collect();
            assert_eq!(row, expected);
        }
    }

    #[test]
    fn duplicates_are_neighbors_but_self_is_not() {
        let g = knn_exact(&line(&[5.0, 5.0, 5.0, 9.0]), 2, Metric::Euclidean).unwrap();
        assert_eq!(g.neighbors(0), &[1, 2]);
        assert_eq!(g.neighbors(1), &[0, 2]);
        assert_eq!(g.row_distances(0), &[0.0, 0.0]);
        g.check().unwrap();
    }

    #[test]
    fn k_out_of_range() {
        let m = line(&[0.0, 1.0]);
        assert!(knn_exact(&m, 0, Metric::Euclidean).is_err());
        assert!(knn_exact(&m, 2, Metric::Euclidean).is_err());
        assert!(knn_descent(&m, 2, Metric::Euclidean, &DescentConfig::default()).is_err());
    }

    #[test]
    fn descent_with_n_equal_k_plus_one_is_exact() {
        let m = random_matrix(16, 4, 3);
        let exact = knn_exact(&m, 15, Metric::Euclidean).unwrap();
        let approx = knn_descent(&m, 15, Metric::Euclidean, &DescentConfig::default()).unwrap();
        assert_eq!(recall(&approx, &exact).unwrap(), 1.0);
        approx.check().unwrap();
    }

    #[test]
    fn descent_is_deterministic_and_mode_independent() {
        let m = random_matrix(400, 8, 5);
        let cfg = DescentConfig { seed: 9, ..Default::default() };
        let a = knn_descent(&m, 10, Metric::Euclidean, &cfg).unwrap();
        let b = knn_descent(&m, 10, Metric::Euclidean, &cfg).unwrap();
        let c = knn_descent(&m, 10, Metric::Euclidean, &DescentConfig { parallel: true, ..cfg }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        a.check().unwrap();
    }

    #[test]
    fn recall_counts_overlap() {
        let g = |idx: Vec<u32>| KnnGraph {
            k: 2,
            distances: vec![0.0; idx.len()],
            indices: idx,
            metric: Metric::Euclidean,
        };
        let exact = g(vec![1, 2, 0, 2]);
        assert_eq!(recall(&exact, &exact).unwrap(), 1.0);
        assert_eq!(recall(&g(vec![3, 4, 3, 4]), &exact).unwrap(), 0.0);
        assert_eq!(recall(&g(vec![1, 5, 5, 2]), &exact).unwrap(), 0.5);
        let other = KnnGraph { k: 1, ..exact.clone() };
        assert!(recall(&other, &exact).is_err());
    }

    #[test]
    fn auto_picks_exact_for_small_inputs() {
        let m = random_matrix(50, 3, 2);
        let a = knn(&m, 5, Metric::Euclidean, KnnMethod::Auto, &DescentConfig::default()).unwrap();
        assert_eq!(a, knn_exact(&m, 5, Metric::Euclidean).unwrap());
    }
}
