//! Report documents: what a run produced, in the interchange format read by
//! the web explorer.
//!
//! Layout of `report.json`:
//!
//! ```text
//! { version, generated_at,
//!   datasets:   [{ tag, ..., sample_sets: [{ id, ids[], labels{col: {categories, codes}} }] }],
//!   embeddings: [{ id, dataset, sample_set, source, params, coords: [x0, y0, x1, y1, ...] }],
//!   metrics:    [{ embedding, n_evaluated, silhouette{col}, silhouette_high{col}, knn_preservation, cpd }],
//!   probes:     [{ dataset, input, embedding?, result }],
//!   failures:   [{ dataset, stage, cell?, message }] }
//! ```
//!
//! Sample ids are stored once per sample set; embedding coordinates follow
//! that order. Coordinates are written with 6 significant digits.

mod plan;
mod site;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize, Serializer};

use crate::data::{EmbeddingParams, FeatureFormat, ProbeResult};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;

pub use plan::{run, RunPlan, DEFAULT_SAMPLE_SIZES};
pub use site::{render_summary, write_report, FALLBACK_VIEWER};

pub const REPORT_VERSION: &str = "1.0.0";

/// Rounds to 6 significant decimal digits.
pub fn round6(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.5e}").parse().unwrap_or(v)
}

fn serialize_coords<S: Serializer>(coords: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(coords.iter().map(|&v| round6(v)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCodes {
    pub categories: Vec<String>,
    /// Index into `categories` per sample-set id.
    pub codes: Vec<u32>,
}

impl LabelCodes {
    pub fn encode(values: &[&str]) -> Self {
        let categories: Vec<String> = values
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(str::to_string)
            .collect();
        let codes = values
            .iter()
            .map(|v| categories.binary_search_by(|c| c.as_str().cmp(v)).unwrap() as u32)
            .collect();
        Self { categories, codes }
    }

    pub fn value(&self, i: usize) -> &str {
        &self.categories[self.codes[i] as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub id: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stratify_by: Option<String>,
    pub ids: Vec<String>,
    pub labels: BTreeMap<String, LabelCodes>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub tag: String,
    pub features: String,
    pub format: FeatureFormat,
    pub checksum: String,
    pub n_samples: usize,
    pub dim: usize,
    /// Feature rows without a label row.
    pub unlabelled: usize,
    pub label_columns: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_features: Option<String>,
    pub sample_sets: Vec<SampleSet>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    Features,
    Raw,
}

impl std::fmt::Display for EmbeddingSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EmbeddingSource::Features => "features",
            EmbeddingSource::Raw => "raw",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingEntry {
    pub id: String,
    pub dataset: String,
    pub sample_set: String,
    pub source: EmbeddingSource,
    pub params: EmbeddingParams,
    #[serde(serialize_with = "serialize_coords")]
    pub coords: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub embedding: String,
    /// Points scored by silhouette and kNN preservation.
    pub n_evaluated: usize,
    #[serde(flatten)]
    pub scores: MetricReport,
}

/// What a probe was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeInput {
    Features,
    Raw,
    /// The 2-D coordinates of one embedding.
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeEntry {
    pub dataset: String,
    pub input: ProbeInput,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<String>,
    pub result: ProbeResult,
}

/// A stage that failed; the rest of the run continued.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub dataset: String,
    pub stage: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub version: String,
    pub generated_at: String,
    pub datasets: Vec<DatasetSummary>,
    pub embeddings: Vec<EmbeddingEntry>,
    pub metrics: Vec<MetricEntry>,
    pub probes: Vec<ProbeEntry>,
    #[serde(default)]
    pub failures: Vec<Failure>,
}

fn major(version: &str) -> Option<u64> {
    version.split('.').next()?.parse().ok()
}

impl ReportDocument {
    pub fn empty(generated_at: impl Into<String>) -> Self {
        Self {
            version: REPORT_VERSION.into(),
            generated_at: generated_at.into(),
            datasets: Vec::new(),
            embeddings: Vec::new(),
            metrics: Vec::new(),
            probes: Vec::new(),
            failures: Vec::new(),
        }
    }

    /// Compact canonical JSON.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses and validates a report of the same major version.
    pub fn from_json(s: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(s)?;
        let version = value
            .get("version")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::Schema("missing version".into()))?;
        if major(version) != major(REPORT_VERSION) {
            return Err(Error::Schema(format!(
                "unsupported report version {version}, this build reads {REPORT_VERSION}"
            )));
        }
        let doc: ReportDocument = serde_json::from_value(value)?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn sample_set(&self, dataset: &str, id: &str) -> Option<&SampleSet> {
        self.datasets
            .iter()
            .find(|d| d.tag == dataset)?
            .sample_sets
            .iter()
            .find(|s| s.id == id)
    }

    pub fn embedding(&self, id: &str) -> Option<&EmbeddingEntry> {
        self.embeddings.iter().find(|e| e.id == id)
    }

    /// Checks references, shapes and value ranges. Lists every problem found.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if major(&self.version).is_none() {
            problems.push(format!("version {:?} is not semver", self.version));
        }
        let mut tags = BTreeSet::new();
        for d in &self.datasets {
            if !tags.insert(d.tag.as_str()) {
                problems.push(format!("duplicate dataset tag {:?}", d.tag));
            }
            let mut set_ids = BTreeSet::new();
            for s in &d.sample_sets {
                if !set_ids.insert(s.id.as_str()) {
                    problems.push(format!("{}: duplicate sample set {:?}", d.tag, s.id));
                }
                for (col, codes) in &s.labels {
                    if codes.codes.len() != s.ids.len() {
                        problems.push(format!("{}: column {col} has {} codes for {} ids", s.id, codes.codes.len(), s.ids.len()));
                    }
                    if codes.codes.iter().any(|&c| c as usize >= codes.categories.len()) {
                        problems.push(format!("{}: column {col} has a code out of range", s.id));
                    }
                }
            }
        }
        let mut embedding_ids = BTreeSet::new();
        for e in &self.embeddings {
            if !embedding_ids.insert(e.id.as_str()) {
                problems.push(format!("duplicate embedding id {:?}", e.id));
            }
            match self.sample_set(&e.dataset, &e.sample_set) {
                None => problems.push(format!("embedding {} references unknown {}/{}", e.id, e.dataset, e.sample_set)),
                Some(s) if e.coords.len() != 2 * s.ids.len() => {
                    problems.push(format!("embedding {} has {} coordinates for {} ids", e.id, e.coords.len(), s.ids.len()))
                }
                Some(_) => {}
            }
            if e.coords.iter().any(|v| !v.is_finite()) {
                problems.push(format!("embedding {} has non-finite coordinates", e.id));
            }
        }
        let in_range = |v: f64, lo: f64, hi: f64| v.is_finite() && v >= lo - 1e-12 && v <= hi + 1e-12;
        for m in &self.metrics {
            if !embedding_ids.contains(m.embedding.as_str()) {
                problems.push(format!("metrics reference unknown embedding {:?}", m.embedding));
            }
            let s = &m.scores;
            for (col, v) in s.silhouette.iter().chain(&s.silhouette_high) {
                if !in_range(*v, -1.0, 1.0) {
                    problems.push(format!("{}: silhouette {col} = {v} outside [-1, 1]", m.embedding));
                }
            }
            if let Some(k) = &s.knn_preservation {
                if !in_range(k.value, 0.0, 1.0) {
                    problems.push(format!("{}: knn preservation {} outside [0, 1]", m.embedding, k.value));
                }
            }
            if let Some(c) = &s.cpd {
                if !in_range(c.rho, -1.0, 1.0) {
                    problems.push(format!("{}: cpd {} outside [-1, 1]", m.embedding, c.rho));
                }
            }
        }
        for p in &self.probes {
            if !tags.contains(p.dataset.as_str()) {
                problems.push(format!("probe references unknown dataset {:?}", p.dataset));
            }
            match (&p.input, &p.embedding) {
                (ProbeInput::Embedding, Some(e)) if !embedding_ids.contains(e.as_str()) => {
                    problems.push(format!("probe references unknown embedding {e:?}"))
                }
                (ProbeInput::Embedding, None) => problems.push("embedding probe without an embedding id".into()),
                _ => {}
            }
            let r = &p.result;
            let m = r.classes.len();
            for run in &r.runs {
                if !in_range(run.test_accuracy, 0.0, 1.0) {
                    problems.push(format!("probe {}: accuracy {} outside [0, 1]", r.label_column, run.test_accuracy));
                }
                if run.confusion.len() != m || run.confusion.iter().any(|row| row.len() != m) {
                    problems.push(format!("probe {}: confusion matrix is not {m}x{m}", r.label_column));
                }
            }
            if !r.runs.is_empty() {
                let mean = r.runs.iter().map(|x| x.test_accuracy).sum::<f64>() / r.runs.len() as f64;
                if (mean - r.mean_accuracy).abs() > 1e-12 {
                    problems.push(format!("probe {}: mean accuracy does not match its runs", r.label_column));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Schema(problems.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ProbeRun;
    use crate::distance::Metric;
    use crate::metrics::{CpdScore, KnnPreservation};

    pub(crate) fn sample_doc() -> ReportDocument {
        let mut doc = ReportDocument::empty("2026-01-01T00:00:00Z");
        doc.datasets.push(DatasetSummary {
            tag: "epoch-020".into(),
            features: "f.fbin".into(),
            format: FeatureFormat::Fbin,
            checksum: "00".into(),
            n_samples: 3,
            dim: 4,
            unlabelled: 0,
            label_columns: vec!["tss".into()],
            raw_features: None,
            sample_sets: vec![SampleSet {
                id: "epoch-020/n3".into(),
                seed: 0,
                stratify_by: None,
                ids: vec!["a".into(), "b".into(), "c".into()],
                labels: BTreeMap::from([("tss".into(), LabelCodes::encode(&["x", "y", "x"]))]),
            }],
        });
        doc.embeddings.push(EmbeddingEntry {
            id: "e0".into(),
            dataset: "epoch-020".into(),
            sample_set: "epoch-020/n3".into(),
            source: EmbeddingSource::Features,
            params: EmbeddingParams {
                n_neighbors: 2,
                min_dist: 0.1,
                n_epochs: 10,
                seed: 0,
                metric: Metric::Euclidean,
            },
            coords: vec![0.1234567891, -2.0, 1e-7, 3.333333333, 12345678.9, 0.0],
        });
        doc.metrics.push(MetricEntry {
            embedding: "e0".into(),
            n_evaluated: 3,
            scores: MetricReport {
                silhouette: BTreeMap::from([("tss".into(), 0.25)]),
                silhouette_high: BTreeMap::new(),
                knn_preservation: Some(KnnPreservation { k: 1, value: 2.0 / 3.0 }),
                cpd: Some(CpdScore { rho: 0.5, degenerate: false, n_pairs: 3, seed: 1 }),
            },
        });
        let run = ProbeRun {
            seed: 0,
            split_seed: 0,
            test_accuracy: 0.5,
            confusion: vec![vec![1, 0], vec![1, 0]],
            best_epoch: 0,
            best_validation_accuracy: 1.0,
            excluded_test: 0,
            chance_baseline: 0.5,
        };
        doc.probes.push(ProbeEntry {
            dataset: "epoch-020".into(),
            input: ProbeInput::Features,
            embedding: None,
            result: ProbeResult::from_runs("tss", vec!["x".into(), "y".into()], vec![run]),
        });
        doc
    }

    #[test]
    fn round6_keeps_six_significant_digits() {
        assert_eq!(round6(0.1234567891), 0.123457);
        assert_eq!(round6(12345678.9), 12345700.0);
        assert_eq!(round6(-2.0), -2.0);
        assert_eq!(round6(1e-7), 1e-7);
        assert_eq!(round6(round6(3.333333333)), round6(3.333333333));
    }

    #[test]
    fn canonical_form_round_trips_byte_identically() {
        let doc = sample_doc();
        let first = doc.to_json().unwrap();
        assert!(first.contains("\"coords\":[0.123457,-2.0,1e-7,3.33333,12345700.0,0.0]"), "{first}");
        let parsed = ReportDocument::from_json(&first).unwrap();
        assert_eq!(parsed.to_json().unwrap(), first);
    }

    #[test]
    fn minimal_document_round_trips() {
        let doc = ReportDocument::empty("t");
        let json = doc.to_json().unwrap();
        assert_eq!(ReportDocument::from_json(&json).unwrap(), doc);
    }

    #[test]
    fn validation_catches_broken_references() {
        let mut doc = sample_doc();
        doc.embeddings[0].sample_set = "nope".into();
        doc.metrics[0].embedding = "e9".into();
        doc.probes[0].dataset = "ghost".into();
        let err = doc.validate().unwrap_err().to_string();
        assert!(err.contains("unknown epoch-020/nope"), "{err}");
        assert!(err.contains("unknown embedding \"e9\""), "{err}");
        assert!(err.contains("unknown dataset \"ghost\""), "{err}");

        let mut doc = sample_doc();
        doc.embeddings[0].coords.pop();
        assert!(doc.validate().is_err());
        let mut doc = sample_doc();
        doc.probes[0].result.mean_accuracy = 0.9;
        assert!(doc.validate().is_err());
    }

    #[test]
    fn version_gate() {
        let mut doc = sample_doc();
        doc.version = "1.4.0".into();
        assert!(ReportDocument::from_json(&doc.to_json().unwrap()).is_ok());
        doc.version = "2.0.0".into();
        let err = ReportDocument::from_json(&doc.to_json().unwrap()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
        assert!(ReportDocument::from_json("{}").is_err());
    }

    #[test]
    fn label_codes_encode_sorted_categories() {
        let c = LabelCodes::encode(&["b", "a", "b", "c"]);
        assert_eq!(c.categories, vec!["a", "b", "c"]);
        assert_eq!(c.codes, vec![1, 0, 1, 2]);
        assert_eq!(c.value(3), "c");
    }
}
