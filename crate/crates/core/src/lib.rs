//! Bias and overfitting inspection for learned feature representations.
//!
//! Feature vectors exported by any model are embedded in two dimensions
//! with UMAP, scored with clustering and structure-preservation metrics, and
//! probed with linear classifiers trained on sensitive variables (tissue
//! source site, scanner, patient, ...). A probe that predicts such a
//! variable well above chance is evidence of a batch-effect shortcut.
//!
//! Module map:
//!
//! * [`data`]: feature matrices, label tables, splits, embedding and probe results
//! * [`io`], [`sampling`]: file formats, subsampling, top-k balancing, group splits
//! * [`neighbors`]: exact and NN-descent k-nearest-neighbor graphs
//! * [`umap`]: calibration, fuzzy graph, curve fit and layout optimization
//! * [`probe`]: softmax linear probes trained with Adam
//! * [`metrics`]: silhouette, kNN preservation, distance rank correlation
//! * [`synth`]: synthetic blobs with injectable site effects
//! * [`report`]: pipeline orchestration and the on-disk report bundle

pub mod data;
pub mod distance;
pub mod error;
pub mod io;
pub mod metrics;
pub mod neighbors;
pub mod probe;
pub mod report;
pub mod rng;
pub mod sampling;
pub mod synth;
pub mod umap;

pub use data::{
    join, validate_features, Aligned, EmbeddingParams, EmbeddingResult, FeatureFormat, FeatureMatrix,
    LabelTable, Manifest, Partition, ProbeResult, ProbeRun, RawFeatures, SplitAssignment, MISSING,
};
pub use distance::Metric;
pub use error::{Error, Result};
