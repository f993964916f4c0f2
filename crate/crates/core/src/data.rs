//! Shared data model: feature matrices, label tables, splits, embeddings and
//! probe outputs.
//!
//! Everything here is immutable once constructed. Feature values are stored as
//! `f32`; kernels that consume them accumulate in `f64`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::distance::Metric;
use crate::error::{Error, Result};

/// Category used for empty label cells. Excluded from probes and metrics.
pub const MISSING: &str = "__missing__";

/// Unvalidated feature matrix parts, as produced by the loaders.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFeatures {
    pub ids: Vec<String>,
    pub values: Vec<f32>,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    ZeroDim,
    /// `values.len()` is not `ids.len() * dim`.
    Shape { expected: usize, found: usize },
    DuplicateId { id: String, first_row: usize, row: usize },
    NonFinite { row: usize, count: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ZeroDim => write!(f, "dimension must be at least 1"),
            Violation::Shape { expected, found } => {
                write!(f, "expected {expected} values, found {found}")
            }
            Violation::DuplicateId { id, first_row, row } => {
                write!(f, "duplicate id \"{id}\" at rows {first_row} and {row}")
            }
            Violation::NonFinite { row, count } => {
                write!(f, "row {row}: {count} non-finite value(s)")
            }
        }
    }
}

/// Outcome of [`validate_features`]. Empty means the matrix is well formed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureValidation {
    pub violations: Vec<Violation>,
}

impl FeatureValidation {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for FeatureValidation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        const SHOWN: usize = 20;
        for (i, v) in self.violations.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        if self.violations.len() > SHOWN {
            write!(f, "; ... {} more", self.violations.len() - SHOWN)?;
        }
        Ok(())
    }
}

/// Checks every [`FeatureMatrix`] invariant and reports all violations with
/// their row indices.
pub fn validate_features(raw: &RawFeatures) -> FeatureValidation {
    let mut violations = Vec::new();
    if raw.dim == 0 {
        violations.push(Violation::ZeroDim);
    }
    let expected = raw.ids.len() * raw.dim;
    if raw.values.len() != expected {
        violations.push(Violation::Shape {
            expected,
            found: raw.values.len(),
        });
    }

    let mut seen: HashMap<&str, usize> = HashMap::with_capacity(raw.ids.len());
    for (row, id) in raw.ids.iter().enumerate() {
        if let Some(&first_row) = seen.get(id.as_str()) {
            violations.push(Violation::DuplicateId {
                id: id.clone(),
                first_row,
                row,
            });
        } else {
            seen.insert(id, row);
        }
    }

    if raw.dim > 0 {
        for (row, chunk) in raw.values.chunks(raw.dim).enumerate() {
            let count = chunk.iter().filter(|v| !v.is_finite()).count();
            if count > 0 {
                violations.push(Violation::NonFinite { row, count });
            }
        }
    }
    FeatureValidation { violations }
}

/// Dense row-major `n_samples x dim` matrix of per-sample feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    ids: Vec<String>,
    values: Vec<f32>,
    dim: usize,
    index: HashMap<String, usize>,
}

impl TryFrom<RawFeatures> for FeatureMatrix {
    type Error = Error;

    fn try_from(raw: RawFeatures) -> Result<Self> {
        let verdict = validate_features(&raw);
        if !verdict.is_ok() {
            return Err(Error::InvalidFeatures(verdict));
        }
        let index = raw
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        Ok(Self {
            ids: raw.ids,
            values: raw.values,
            dim: raw.dim,
            index,
        })
    }
}

impl FeatureMatrix {
    pub fn new(ids: Vec<String>, values: Vec<f32>, dim: usize) -> Result<Self> {
        RawFeatures { ids, values, dim }.try_into()
    }

    pub fn n_samples(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// New matrix holding `rows` in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut values = Vec::with_capacity(rows.len() * self.dim);
        let mut ids = Vec::with_capacity(rows.len());
        for &r in rows {
            values.extend_from_slice(self.row(r));
            ids.push(self.ids[r].clone());
        }
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Self {
            ids,
            values,
            dim: self.dim,
            index,
        }
    }

    /// Subset by id, in the order given. Unknown ids are an error.
    pub fn select_ids<S: AsRef<str>>(&self, ids: &[S]) -> Result<Self> {
        let rows = ids
            .iter()
            .map(|id| {
                self.position(id.as_ref())
                    .ok_or_else(|| Error::invalid(format!("unknown sample id '{}'", id.as_ref())))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select_rows(&rows))
    }

    /// Rows scaled to unit L2 norm; all-zero rows are left as they are.
    pub fn l2_normalized(&self) -> Self {
        let mut out = self.clone();
        for row in out.values.chunks_mut(self.dim) {
            let norm = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in row.iter_mut() {
                    *v = (*v as f64 / norm) as f32;
                }
            }
        }
        out
    }

    pub fn into_raw(self) -> RawFeatures {
        RawFeatures {
            ids: self.ids,
            values: self.values,
            dim: self.dim,
        }
    }
}

/// Categorical metadata keyed by sample id. Empty cells hold [`MISSING`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTable {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    columns: BTreeMap<String, Vec<String>>,
}

impl LabelTable {
    pub fn new(ids: Vec<String>, columns: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        let mut columns = columns;
        for (name, values) in columns.iter_mut() {
            if values.len() != ids.len() {
                return Err(Error::Shape(format!(
                    "column '{name}' has {} values for {} ids",
                    values.len(),
                    ids.len()
                )));
            }
            for v in values.iter_mut() {
                if v.is_empty() {
                    *v = MISSING.to_string();
                }
            }
        }
        Ok(Self { ids, index, columns })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.contains_key(name)
    }

    pub fn column(&self, name: &str) -> Result<&[String]> {
        self.columns
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn value(&self, id: &str, column: &str) -> Option<&str> {
        let row = self.position(id)?;
        self.columns.get(column).map(|c| c[row].as_str())
    }

    /// Sorted distinct values of a column, including [`MISSING`] if present.
    pub fn categories(&self, column: &str) -> Result<Vec<String>> {
        let values = self.column(column)?;
        let set: BTreeSet<&String> = values.iter().collect();
        Ok(set.into_iter().cloned().collect())
    }

    /// Rows for `ids`, in that order.
    pub fn select_ids<S: AsRef<str>>(&self, ids: &[S]) -> Result<Self> {
        let rows = ids
            .iter()
            .map(|id| self.position(id.as_ref()).ok_or_else(|| Error::invalid(format!("unknown id {:?}", id.as_ref()))))
            .collect::<Result<Vec<usize>>>()?;
        let columns = self
            .columns
            .iter()
            .map(|(name, values)| (name.clone(), rows.iter().map(|&r| values[r].clone()).collect()))
            .collect();
        Self::new(rows.iter().map(|&r| self.ids[r].clone()).collect(), columns)
    }

    /// Returns a copy with an extra (or replaced) column.
    pub fn with_column(&self, name: &str, values: Vec<String>) -> Result<Self> {
        let mut columns = self.columns.clone();
        columns.insert(name.to_string(), values);
        Self::new(self.ids.clone(), columns)
    }
}

/// Feature rows aligned with the values of one label column.
#[derive(Debug, Clone, PartialEq)]
pub struct Aligned {
    pub features: FeatureMatrix,
    pub labels: Vec<String>,
    /// Rows of the input matrix whose id is absent from the label table.
    pub dropped: usize,
}

impl Aligned {
    /// Drops rows whose label is [`MISSING`].
    pub fn without_missing(&self) -> Aligned {
        let keep: Vec<usize> = (0..self.labels.len())
            .filter(|&i| self.labels[i] != MISSING)
            .collect();
        Aligned {
            features: self.features.select_rows(&keep),
            labels: keep.iter().map(|&i| self.labels[i].clone()).collect(),
            dropped: self.dropped + (self.labels.len() - keep.len()),
        }
    }
}

/// Pairs each feature row with its `column` label, keeping the matrix order
/// and dropping ids the table does not know.
pub fn join(m: &FeatureMatrix, t: &LabelTable, column: &str) -> Result<Aligned> {
    let values = t.column(column)?;
    let mut rows = Vec::with_capacity(m.n_samples());
    let mut labels = Vec::with_capacity(m.n_samples());
    for (i, id) in m.ids().iter().enumerate() {
        if let Some(r) = t.position(id) {
            rows.push(i);
            labels.push(values[r].clone());
        }
    }
    let dropped = m.n_samples() - rows.len();
    Ok(Aligned {
        features: m.select_rows(&rows),
        labels,
        dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureFormat {
    Csv,
    Fbin,
}

impl FeatureFormat {
    /// Guesses the format from a file extension; anything but `.fbin` is CSV.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("fbin") => FeatureFormat::Fbin,
            _ => FeatureFormat::Csv,
        }
    }
}

impl std::str::FromStr for FeatureFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(FeatureFormat::Csv),
            "fbin" => Ok(FeatureFormat::Fbin),
            other => Err(Error::invalid(format!("unknown feature format '{other}'"))),
        }
    }
}

impl fmt::Display for FeatureFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureFormat::Csv => "csv",
            FeatureFormat::Fbin => "fbin",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSource {
    pub path: PathBuf,
    pub format: FeatureFormat,
}

/// One dataset snapshot: where its features and labels live, and a tag
/// (e.g. `epoch-020`) that names it in reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tag: String,
    pub features: FeatureSource,
    pub labels: PathBuf,
    /// Hex SHA-256 of the feature file. Checked at load time when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checksum: Option<String>,
    /// Features of the same samples from a model-free baseline, embedded
    /// side by side with the model features.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_features: Option<FeatureSource>,
}

impl Manifest {
    pub fn new(tag: impl Into<String>, features: impl Into<PathBuf>, labels: impl Into<PathBuf>) -> Self {
        let features = features.into();
        let format = FeatureFormat::from_path(&features);
        Self {
            tag: tag.into(),
            features: FeatureSource { path: features, format },
            labels: labels.into(),
            checksum: None,
            raw_features: None,
        }
    }

    /// Reads a JSON manifest. Relative paths are resolved against the
    /// manifest's directory.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::format(path, Some(e.line()), e.to_string()))?;
        if let Some(base) = path.parent() {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            fix(&mut m.features.path);
            fix(&mut m.labels);
            if let Some(raw) = m.raw_features.as_mut() {
                fix(&mut raw.path);
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Validation, Partition::Test];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::Train => "train",
            Partition::Validation => "validation",
            Partition::Test => "test",
        })
    }
}

impl std::str::FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "validation" | "val" => Ok(Partition::Validation),
            "test" => Ok(Partition::Test),
            other => Err(Error::invalid(format!("unknown partition '{other}'"))),
        }
    }
}

/// Train/validation/test membership for a set of sample ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub assignment: BTreeMap<String, Partition>,
    pub seed: u64,
    pub ratios: [f64; 3],
    pub group_column: Option<String>,
    /// Non-fatal problems, e.g. a group too large for the requested ratios.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl SplitAssignment {
    pub fn partition_of(&self, id: &str) -> Option<Partition> {
        self.assignment.get(id).copied()
    }

    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for p in self.assignment.values() {
            c[p.index()] += 1;
        }
        c
    }

    pub fn fractions(&self) -> [f64; 3] {
        let c = self.counts();
        let total = self.assignment.len().max(1) as f64;
        [c[0] as f64 / total, c[1] as f64 / total, c[2] as f64 / total]
    }

    pub fn ids_in(&self, partition: Partition) -> impl Iterator<Item = &str> {
        self.assignment
            .iter()
            .filter(move |(_, &p)| p == partition)
            .map(|(id, _)| id.as_str())
    }
}

/// Parameters recorded next to an embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingParams {
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub n_epochs: usize,
    pub seed: u64,
    pub metric: Metric,
}

/// 2-D coordinates per sample plus the parameters that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResult {
    pub ids: Vec<String>,
    pub coords: Vec<[f32; 2]>,
    pub params: EmbeddingParams,
    pub source_tag: String,
}

impl EmbeddingResult {
    /// Coordinates as an `n x 2` row-major feature matrix.
    pub fn as_features(&self) -> Result<FeatureMatrix> {
        let values = self.coords.iter().flat_map(|c| c.iter().copied()).collect();
        FeatureMatrix::new(self.ids.clone(), values, 2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRun {
    pub seed: u64,
    pub split_seed: u64,
    pub test_accuracy: f64,
    /// `confusion[true][predicted]`, indexed like `ProbeResult::classes`.
    pub confusion: Vec<Vec<u64>>,
    /// Epoch (0-based) whose parameters were kept.
    pub best_epoch: usize,
    pub best_validation_accuracy: f64,
    /// Test samples whose class never occurs in training.
    pub excluded_test: usize,
    pub chance_baseline: f64,
}

impl ProbeRun {
    pub fn n_test(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub label_column: String,
    pub classes: Vec<String>,
    pub runs: Vec<ProbeRun>,
    pub mean_accuracy: f64,
    /// Population standard deviation over runs.
    pub std_accuracy: f64,
    /// Mean over runs of `max(1/m, majority-class fraction of the test set)`.
    pub chance_baseline: f64,
}

impl ProbeResult {
    pub fn from_runs(label_column: impl Into<String>, classes: Vec<String>, runs: Vec<ProbeRun>) -> Self {
        let n = runs.len().max(1) as f64;
        let mean = runs.iter().map(|r| r.test_accuracy).sum::<f64>() / n;
        let var = runs.iter().map(|r| (r.test_accuracy - mean).powi(2)).sum::<f64>() / n;
        let chance = runs.iter().map(|r| r.chance_baseline).sum::<f64>() / n;
        Self {
            label_column: label_column.into(),
            classes,
            runs,
            mean_accuracy: mean,
            std_accuracy: var.sqrt(),
            chance_baseline: chance,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn well_formed_matrix_validates() {
        let raw = RawFeatures {
            ids: ids(&["a", "b", "c"]),
            values: (0..12).map(|v| v as f32).collect(),
            dim: 4,
        };
        assert!(validate_features(&raw).is_ok());
        assert!(FeatureMatrix::try_from(raw).is_ok());
    }

    #[test]
    fn nan_row_is_reported() {
        let mut values: Vec<f32> = (0..12).map(|v| v as f32).collect();
        values[2 * 4 + 1] = f32::NAN;
        let raw = RawFeatures {
            ids: ids(&["a", "b", "c"]),
            values,
            dim: 4,
        };
        let v = validate_features(&raw);
        assert_eq!(v.violations, vec![Violation::NonFinite { row: 2, count: 1 }]);
    }

    #[test]
    fn duplicate_id_is_reported() {
        let raw = RawFeatures {
            ids: ids(&["a", "a", "b"]),
            values: vec![0.0; 3],
            dim: 1,
        };
        let v = validate_features(&raw);
        assert_eq!(
            v.violations,
            vec![Violation::DuplicateId {
                id: "a".into(),
                first_row: 0,
                row: 1
            }]
        );
    }

    #[test]
    fn shape_and_dim_are_checked() {
        let raw = RawFeatures {
            ids: ids(&["a"]),
            values: vec![0.0; 3],
            dim: 2,
        };
        assert_eq!(
            validate_features(&raw).violations,
            vec![Violation::Shape { expected: 2, found: 3 }]
        );
        let raw = RawFeatures {
            ids: vec![],
            values: vec![],
            dim: 0,
        };
        assert_eq!(validate_features(&raw).violations, vec![Violation::ZeroDim]);
        // An empty matrix with a positive dimension is fine.
        let raw = RawFeatures {
            ids: vec![],
            values: vec![],
            dim: 3,
        };
        assert!(validate_features(&raw).is_ok());
    }

    fn table(ids_: &[&str], col: &str, vals: &[&str]) -> LabelTable {
        let mut cols = BTreeMap::new();
        cols.insert(col.to_string(), vals.iter().map(|s| s.to_string()).collect());
        LabelTable::new(ids(ids_), cols).unwrap()
    }

    fn matrix(ids_: &[&str]) -> FeatureMatrix {
        let n = ids_.len();
        FeatureMatrix::new(ids(ids_), (0..n * 2).map(|v| v as f32).collect(), 2).unwrap()
    }

    #[test]
    fn join_full_overlap() {
        let m = matrix(&["a", "b", "c"]);
        let t = table(&["c", "a", "b"], "tss", &["3", "1", "2"]);
        let j = join(&m, &t, "tss").unwrap();
        assert_eq!(j.features.ids(), m.ids());
        assert_eq!(j.labels, vec!["1", "2", "3"]);
        assert_eq!(j.dropped, 0);
    }

    #[test]
    fn join_drops_unknown_ids() {
        let m = matrix(&["a", "b", "c"]);
        let t = table(&["a", "c"], "tss", &["1", "3"]);
        let j = join(&m, &t, "tss").unwrap();
        assert_eq!(j.features.ids(), &ids(&["a", "c"])[..]);
        assert_eq!(j.features.row(1), m.row(2));
        assert_eq!(j.dropped, 1);
    }

    #[test]
    fn join_unknown_column() {
        let m = matrix(&["a"]);
        let t = table(&["a"], "site", &["1"]);
        assert!(matches!(join(&m, &t, "tss"), Err(Error::UnknownColumn(c)) if c == "tss"));
    }

    #[test]
    fn join_is_idempotent() {
        let m = matrix(&["a", "b", "c", "d"]);
        let t = table(&["d", "b", "a"], "tss", &["x", "y", ""]);
        let once = join(&m, &t, "tss").unwrap();
        let twice = join(&once.features, &t, "tss").unwrap();
        assert_eq!(once.features, twice.features);
        assert_eq!(once.labels, twice.labels);
        assert_eq!(twice.dropped, 0);
    }

    #[test]
    fn empty_cells_become_missing_and_are_filtered() {
        let m = matrix(&["a", "b"]);
        let t = table(&["a", "b"], "tss", &["22", ""]);
        assert_eq!(t.value("b", "tss"), Some(MISSING));
        let j = join(&m, &t, "tss").unwrap().without_missing();
        assert_eq!(j.labels, vec!["22"]);
        assert_eq!(j.dropped, 1);
    }

    #[test]
    fn duplicate_label_ids_rejected() {
        let mut cols = BTreeMap::new();
        cols.insert("c".to_string(), ids(&["1", "2"]));
        assert!(matches!(
            LabelTable::new(ids(&["a", "a"]), cols),
            Err(Error::DuplicateId(id)) if id == "a"
        ));
    }

    #[test]
    fn probe_result_aggregates_runs() {
        let run = |acc: f64| ProbeRun {
            seed: 0,
            split_seed: 0,
            test_accuracy: acc,
            confusion: vec![vec![1, 0], vec![0, 1]],
            best_epoch: 0,
            best_validation_accuracy: 1.0,
            excluded_test: 0,
            chance_baseline: 0.5,
        };
        let r = ProbeResult::from_runs("c", ids(&["x", "y"]), vec![run(0.5), run(0.7), run(0.9)]);
        assert!((r.mean_accuracy - 0.7).abs() < 1e-12);
        assert!((r.std_accuracy - (0.08f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(r.chance_baseline, 0.5);
    }

    #[test]
    fn l2_normalization_leaves_zero_rows() {
        let m = FeatureMatrix::new(ids(&["a", "b"]), vec![3.0, 4.0, 0.0, 0.0], 2).unwrap();
        let n = m.l2_normalized();
        assert_eq!(n.row(0), &[0.6, 0.8]);
        assert_eq!(n.row(1), &[0.0, 0.0]);
    }
}
