//! UMAP embedding into two dimensions.
//!
//! Pipeline: kNN graph, per-point bandwidth calibration, fuzzy union graph,
//! curve fit for `(a, b)`, then negative-sampling SGD from a seeded uniform
//! initialization. Rows are processed in id order internally so a permuted
//! input yields the same embedding, permuted.

pub mod calibrate;
pub mod curve;
pub mod layout;

use serde::{Deserialize, Serialize};

pub use calibrate::{fuzzy_graph, probabilistic_union, smooth_knn, Bandwidth, FuzzyEdge, FuzzyGraph};
pub use curve::{fit_ab, membership};
pub use layout::{optimize_layout, random_init, LayoutParams};

use crate::data::{EmbeddingParams, EmbeddingResult, FeatureMatrix};
use crate::distance::Metric;
use crate::error::{Error, Result};
use crate::neighbors::{self, DescentConfig, KnnGraph, KnnMethod};
use crate::rng;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    #[default]
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UmapParams {
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub spread: f64,
    /// `None`: 500 epochs up to 10,000 samples, 200 above.
    pub n_epochs: Option<usize>,
    pub negative_sample_rate: usize,
    pub initial_lr: f64,
    pub gradient_clip: f64,
    pub seed: u64,
    pub metric: Metric,
    pub init: Init,
    pub knn_method: KnnMethod,
    /// Hogwild layout and parallel kNN joins; results are not reproducible.
    pub parallel: bool,
}

impl Default for UmapParams {
    fn default() -> Self {
        Self {
            n_neighbors: 15,
            min_dist: 0.1,
            spread: 1.0,
            n_epochs: None,
            negative_sample_rate: 5,
            initial_lr: 1.0,
            gradient_clip: 4.0,
            seed: 0,
            metric: Metric::Euclidean,
            init: Init::Random,
            knn_method: KnnMethod::Auto,
            parallel: false,
        }
    }
}

impl UmapParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_neighbors < 2 {
            return Err(Error::invalid(format!("n_neighbors must be >= 2, got {}", self.n_neighbors)));
        }
        if !(self.min_dist >= 0.0 && self.min_dist < self.spread) {
            return Err(Error::invalid(format!(
                "need 0 <= min_dist < spread, got {} and {}",
                self.min_dist, self.spread
            )));
        }
        if !(self.initial_lr > 0.0) || !(self.gradient_clip > 0.0) {
            return Err(Error::invalid("initial_lr and gradient_clip must be positive"));
        }
        Ok(())
    }

    pub fn epochs_for(&self, n_samples: usize) -> usize {
        self.n_epochs
            .unwrap_or(if n_samples <= 10_000 { 500 } else { 200 })
    }
}

/// kNN graph of a matrix in id order, reusable across `min_dist` values.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    ids: Vec<String>,
    /// `order[r]` is the input row at canonical position `r`.
    order: Vec<usize>,
    graph: KnnGraph,
}

impl PreparedGraph {
    pub fn new(m: &FeatureMatrix, n_neighbors: usize, metric: Metric, method: KnnMethod, seed: u64, parallel: bool) -> Result<Self> {
        let n = m.n_samples();
        if n <= n_neighbors {
            return Err(Error::InsufficientData(format!(
                "UMAP needs more samples than n_neighbors ({n} <= {n_neighbors})"
            )));
        }
        let order = rng::id_order(m.ids());
        let sorted = m.select_rows(&order);
        let cfg = DescentConfig {
            seed,
            parallel,
            ..DescentConfig::default()
        };
        let graph = neighbors::knn(&sorted, n_neighbors, metric, method, &cfg)?;
        Ok(Self {
            ids: m.ids().to_vec(),
            order,
            graph,
        })
    }

    pub fn graph(&self) -> &KnnGraph {
        &self.graph
    }

    pub fn n_neighbors(&self) -> usize {
        self.graph.k
    }

    /// Runs calibration and layout; `p.n_neighbors` and `p.metric` must
    /// match the prepared graph.
    pub fn embed(&self, p: &UmapParams) -> Result<EmbeddingResult> {
        p.validate()?;
        if p.n_neighbors != self.graph.k || p.metric != self.graph.metric {
            return Err(Error::invalid("parameters do not match the prepared kNN graph"));
        }
        let n = self.ids.len();
        let fg = fuzzy_graph(&self.graph)?;
        let (a, b) = fit_ab(p.min_dist, p.spread)?;
        let n_epochs = p.epochs_for(n);
        let lp = LayoutParams {
            a,
            b,
            n_epochs,
            negative_sample_rate: p.negative_sample_rate,
            initial_lr: p.initial_lr,
            gradient_clip: p.gradient_clip,
            seed: p.seed,
            parallel: p.parallel,
        };
        let sorted = optimize_layout(&fg, random_init(n, p.seed), &lp);
        let mut coords = vec![[0.0f32; 2]; n];
        for (r, &row) in self.order.iter().enumerate() {
            coords[row] = sorted[r];
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("layout produced non-finite coordinates"));
        }
        Ok(EmbeddingResult {
            ids: self.ids.clone(),
            coords,
            params: EmbeddingParams {
                n_neighbors: p.n_neighbors,
                min_dist: p.min_dist,
                n_epochs,
                seed: p.seed,
                metric: p.metric,
            },
            source_tag: String::new(),
        })
    }
}

/// End-to-end embedding. `source_tag` is left empty for the caller.
pub fn umap(m: &FeatureMatrix, p: &UmapParams) -> Result<EmbeddingResult> {
    p.validate()?;
    PreparedGraph::new(m, p.n_neighbors, p.metric, p.knn_method, p.seed, p.parallel)?.embed(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn too_few_samples() {
        let m = crate::neighbors::random_matrix(10, 3, 0);
        assert!(matches!(umap(&m, &UmapParams::default()), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn invalid_params() {
        let m = crate::neighbors::random_matrix(30, 3, 0);
        let p = UmapParams { n_neighbors: 1, ..Default::default() };
        assert!(umap(&m, &p).is_err());
        let p = UmapParams { min_dist: 1.5, ..Default::default() };
        assert!(umap(&m, &p).is_err());
    }

    #[test]
    fn epoch_defaults() {
        let p = UmapParams::default();
        assert_eq!(p.epochs_for(10_000), 500);
        assert_eq!(p.epochs_for(10_001), 200);
        assert_eq!(UmapParams { n_epochs: Some(7), ..p }.epochs_for(5), 7);
    }

    #[test]
    fn same_seed_same_embedding() {
        let m = crate::neighbors::random_matrix(120, 5, 8);
        let p = UmapParams { n_epochs: Some(60), seed: 3, ..Default::default() };
        let a = umap(&m, &p).unwrap();
        let b = umap(&m, &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.params.n_epochs, 60);
        assert_eq!(a.coords.len(), 120);
    }
}
