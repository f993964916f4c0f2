use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    DatasetSummary, EmbeddingEntry, EmbeddingSource, Failure, LabelCodes, MetricEntry, ProbeEntry, ProbeInput,
    ReportDocument, SampleSet,
};
use crate::data::{join, FeatureMatrix, LabelTable, Manifest, SplitAssignment};
use crate::distance::Metric;
use crate::error::{Error, Result};
use crate::metrics::{self, KnnPreservation, MetricReport};
use crate::probe::{probe_on_embedding, train_probe, ProbeConfig};
use crate::sampling::{balance_split, group_stratified_split, subsample_indices, BalanceSpec};
use crate::umap::{PreparedGraph, UmapParams};
use crate::{io, rng};

pub const DEFAULT_SAMPLE_SIZES: [usize; 2] = [10_000, 100_000];

/// Everything one report run computes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunPlan {
    pub datasets: Vec<Manifest>,
    pub n_neighbors: Vec<usize>,
    pub min_dist: Vec<f64>,
    /// Capped at each dataset's size; empty means [`DEFAULT_SAMPLE_SIZES`].
    pub sample_sizes: Vec<usize>,
    pub stratify_by: Option<String>,
    pub n_epochs: Option<usize>,
    pub metric: Metric,
    /// Label columns to probe.
    pub probe_targets: Vec<String>,
    pub probe: ProbeConfig,
    /// Also probe the 2-D coordinates of every embedding.
    pub probe_on_embedding: bool,
    /// Label columns scored by silhouette; empty means all columns.
    pub metric_columns: Vec<String>,
    pub knn_k: usize,
    pub cpd_pairs: usize,
    /// Silhouette and kNN preservation use a seeded subset of at most this
    /// many points; both are quadratic in the number of points.
    pub metric_sample_cap: usize,
    pub silhouette_high: bool,
    pub split_ratios: [f64; 3],
    pub group_column: Option<String>,
    pub balance: Option<BalanceSpec>,
    pub normalize: bool,
    pub seed: u64,
    /// Reuse kNN graphs across `min_dist` values.
    pub cache_graphs: bool,
    /// Single-threaded, bitwise reproducible run.
    pub deterministic: bool,
    /// Lock-free parallel layout; ignored when `deterministic`.
    pub parallel_layout: bool,
    /// Overrides the wall-clock timestamp.
    pub generated_at: Option<String>,
}

impl Default for RunPlan {
    fn default() -> Self {
        Self {
            datasets: Vec::new(),
            n_neighbors: vec![15],
            min_dist: vec![0.1],
            sample_sizes: Vec::new(),
            stratify_by: None,
            n_epochs: None,
            metric: Metric::Euclidean,
            probe_targets: Vec::new(),
            probe: ProbeConfig::default(),
            probe_on_embedding: true,
            metric_columns: Vec::new(),
            knn_k: metrics::DEFAULT_KNN_K,
            cpd_pairs: metrics::DEFAULT_CPD_PAIRS,
            metric_sample_cap: 5_000,
            silhouette_high: true,
            split_ratios: [0.7, 0.15, 0.15],
            group_column: None,
            balance: None,
            normalize: false,
            seed: 0,
            cache_graphs: true,
            deterministic: false,
            parallel_layout: false,
            generated_at: None,
        }
    }
}

impl RunPlan {
    pub fn wants_umap(&self) -> bool {
        !self.n_neighbors.is_empty() || !self.min_dist.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::invalid("the plan lists no datasets"));
        }
        let mut tags: Vec<&str> = self.datasets.iter().map(|d| d.tag.as_str()).collect();
        tags.sort_unstable();
        if tags.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("dataset tags must be unique"));
        }
        if self.wants_umap() && (self.n_neighbors.is_empty() || self.min_dist.is_empty()) {
            return Err(Error::invalid("the UMAP grid needs at least one n_neighbors and one min_dist"));
        }
        if let Some(&k) = self.n_neighbors.iter().max() {
            if let Some(&s) = self.sample_sizes.iter().find(|&&s| s < k + 1) {
                return Err(Error::invalid(format!("sample size {s} is below n_neighbors + 1 = {}", k + 1)));
            }
        }
        if self.knn_k == 0 || self.cpd_pairs < 2 || self.metric_sample_cap < 3 {
            return Err(Error::invalid("knn_k >= 1, cpd_pairs >= 2 and metric_sample_cap >= 3 are required"));
        }
        self.probe.validate()
    }

    fn sizes_for(&self, n: usize) -> Vec<usize> {
        let requested: &[usize] = if self.sample_sizes.is_empty() {
            &DEFAULT_SAMPLE_SIZES
        } else {
            &self.sample_sizes
        };
        let mut sizes: Vec<usize> = requested.iter().map(|&s| s.min(n)).filter(|&s| s > 0).collect();
        sizes.sort_unstable();
        sizes.dedup();
        sizes
    }
}

/// A loaded dataset and everything derived from it once.
struct Loaded {
    tag: String,
    features: FeatureMatrix,
    raw: Option<FeatureMatrix>,
    labels: LabelTable,
    splits: Vec<SplitAssignment>,
    samples: Vec<(SampleSet, Vec<usize>)>,
}

/// Output of one unit of work; merged in a fixed order.
#[derive(Default)]
struct Part {
    embeddings: Vec<EmbeddingEntry>,
    metrics: Vec<MetricEntry>,
    probes: Vec<ProbeEntry>,
    failures: Vec<Failure>,
}

impl Part {
    fn fail(&mut self, dataset: &str, stage: &str, cell: Option<String>, e: impl std::fmt::Display) {
        log::warn!("{dataset} {stage} {}: {e}", cell.as_deref().unwrap_or(""));
        self.failures.push(Failure {
            dataset: dataset.to_string(),
            stage: stage.to_string(),
            cell,
            message: e.to_string(),
        });
    }

    fn extend(&mut self, other: Part) {
        self.embeddings.extend(other.embeddings);
        self.metrics.extend(other.metrics);
        self.probes.extend(other.probes);
        self.failures.extend(other.failures);
    }
}

fn load(plan: &RunPlan, manifest: &Manifest) -> Result<(Loaded, DatasetSummary)> {
    let checksum = io::file_checksum(&manifest.features.path)?;
    if let Some(expected) = &manifest.checksum {
        if !expected.eq_ignore_ascii_case(&checksum) {
            return Err(Error::Checksum {
                path: manifest.features.path.clone(),
                expected: expected.clone(),
                found: checksum,
            });
        }
    }
    let mut features = io::load_features(&manifest.features.path, manifest.features.format, None)?;
    let labels = io::load_labels(&manifest.labels)?;
    let mut raw = manifest
        .raw_features
        .as_ref()
        .map(|src| io::load_features(&src.path, src.format, None))
        .transpose()?;
    if plan.normalize {
        features = features.l2_normalized();
        raw = raw.map(|r| r.l2_normalized());
    }
    for col in plan.probe_targets.iter().chain(&plan.metric_columns) {
        labels.column(col)?;
    }

    let splits = if plan.probe_targets.is_empty() {
        Vec::new()
    } else {
        (0..plan.probe.runs as u64)
            .map(|r| {
                let split = group_stratified_split(&labels, plan.split_ratios, plan.group_column.as_deref(), plan.seed.wrapping_add(r))?;
                match &plan.balance {
                    Some(spec) => balance_split(&split, &labels, spec),
                    None => Ok(split),
                }
            })
            .collect::<Result<Vec<_>>>()?
    };
    for w in splits.iter().flat_map(|s| &s.warnings) {
        log::warn!("{}: {w}", manifest.tag);
    }

    let columns: Vec<String> = labels.column_names().map(str::to_string).collect();
    let mut samples = Vec::new();
    if plan.wants_umap() {
        for size in plan.sizes_for(features.n_samples()) {
            let rows = subsample_indices(&features, &labels, size, plan.seed, plan.stratify_by.as_deref())?;
            let ids: Vec<String> = rows.iter().map(|&r| features.ids()[r].clone()).collect();
            let mut codes = BTreeMap::new();
            for col in &columns {
                let values: Vec<&str> = ids.iter().map(|id| labels.value(id, col).unwrap_or(crate::MISSING)).collect();
                codes.insert(col.clone(), LabelCodes::encode(&values));
            }
            let set = SampleSet {
                id: format!("{}/n{size}", manifest.tag),
                seed: plan.seed,
                stratify_by: plan.stratify_by.clone(),
                ids,
                labels: codes,
            };
            samples.push((set, rows));
        }
    }
    let unlabelled = features.ids().iter().filter(|id| labels.position(id).is_none()).count();
    let summary = DatasetSummary {
        tag: manifest.tag.clone(),
        features: manifest.features.path.display().to_string(),
        format: manifest.features.format,
        checksum,
        n_samples: features.n_samples(),
        dim: features.dim(),
        unlabelled,
        label_columns: columns,
        raw_features: manifest.raw_features.as_ref().map(|r| r.path.display().to_string()),
        sample_sets: samples.iter().map(|(s, _)| s.clone()).collect(),
    };
    Ok((
        Loaded {
            tag: manifest.tag.clone(),
            features,
            raw,
            labels,
            splits,
            samples,
        },
        summary,
    ))
}

fn feature_probes(plan: &RunPlan, d: &Loaded) -> Part {
    let mut part = Part::default();
    let inputs = [(ProbeInput::Features, Some(&d.features)), (ProbeInput::Raw, d.raw.as_ref())];
    for (input, m) in inputs {
        let Some(m) = m else { continue };
        for target in &plan.probe_targets {
            let res = join(m, &d.labels, target).and_then(|a| train_probe(target, &a, &d.splits, &plan.probe));
            match res {
                Ok(result) => part.probes.push(ProbeEntry {
                    dataset: d.tag.clone(),
                    input,
                    embedding: None,
                    result,
                }),
                Err(e) => part.fail(&d.tag, "probe", Some(format!("{input:?}/{target}").to_lowercase()), e),
            }
        }
    }
    part
}

/// Seeded subset of `0..n` of size at most `cap`, ascending.
fn metric_subset(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut idx = rand::seq::index::sample(&mut rng::stream(seed, 7), n, cap).into_vec();
    idx.sort_unstable();
    idx
}

fn score(plan: &RunPlan, high: &FeatureMatrix, low: &FeatureMatrix, set: &SampleSet) -> (MetricEntry, Vec<(String, String)>) {
    let mut errors = Vec::new();
    let subset = metric_subset(high.n_samples(), plan.metric_sample_cap, plan.seed);
    let (hs, ls) = (high.select_rows(&subset), low.select_rows(&subset));
    let columns: Vec<&String> = if plan.metric_columns.is_empty() {
        set.labels.keys().collect()
    } else {
        plan.metric_columns.iter().collect()
    };
    let mut scores = MetricReport::default();
    for col in columns {
        let Some(codes) = set.labels.get(col) else {
            errors.push((format!("silhouette/{col}"), format!("unknown label column '{col}'")));
            continue;
        };
        let labels: Vec<&str> = subset.iter().map(|&i| codes.value(i)).collect();
        match metrics::silhouette(ls.values(), 2, &labels, Metric::Euclidean) {
            Ok(s) => {
                scores.silhouette.insert(col.clone(), s);
            }
            Err(e) => errors.push((format!("silhouette/{col}"), e.to_string())),
        }
        if plan.silhouette_high {
            match metrics::silhouette(hs.values(), hs.dim(), &labels, plan.metric) {
                Ok(s) => {
                    scores.silhouette_high.insert(col.clone(), s);
                }
                Err(e) => errors.push((format!("silhouette_high/{col}"), e.to_string())),
            }
        }
    }
    // Low-dimensional neighbors are always Euclidean; high-dimensional ones
    // follow the plan's metric.
    let knn = metrics::knn_preservation_with(&hs, plan.metric, &ls, Metric::Euclidean, plan.knn_k);
    match knn {
        Ok(value) => scores.knn_preservation = Some(KnnPreservation { k: plan.knn_k, value }),
        Err(e) => errors.push(("knn_preservation".into(), e.to_string())),
    }
    match metrics::cpd_with(high, low, plan.cpd_pairs, plan.seed, plan.metric, Metric::Euclidean) {
        Ok(c) => scores.cpd = Some(c),
        Err(e) => errors.push(("cpd".into(), e.to_string())),
    }
    (
        MetricEntry {
            embedding: String::new(),
            n_evaluated: subset.len(),
            scores,
        },
        errors,
    )
}

/// One kNN graph's worth of grid cells: every `min_dist` for a
/// (dataset, source, sample set, n_neighbors) combination.
fn graph_cells(plan: &RunPlan, d: &Loaded, source: EmbeddingSource, sample: usize, n_neighbors: usize) -> Part {
    let mut part = Part::default();
    let (set, rows) = &d.samples[sample];
    let full = match source {
        EmbeddingSource::Features => &d.features,
        EmbeddingSource::Raw => d.raw.as_ref().expect("raw cells are only scheduled with raw features"),
    };
    let high = match source {
        EmbeddingSource::Features => Ok(full.select_rows(rows)),
        EmbeddingSource::Raw => full.select_ids(&set.ids),
    };
    let group = format!("{}/{source}/nn{n_neighbors}", set.id);
    let high = match high {
        Ok(h) => h,
        Err(e) => {
            part.fail(&d.tag, "sample", Some(group), e);
            return part;
        }
    };
    let parallel = plan.parallel_layout && !plan.deterministic;
    let prepare = || PreparedGraph::new(&high, n_neighbors, plan.metric, Default::default(), plan.seed, parallel);
    let mut cached = None;
    if plan.cache_graphs {
        match prepare() {
            Ok(g) => cached = Some(g),
            Err(e) => {
                part.fail(&d.tag, "knn", Some(group), e);
                return part;
            }
        }
    }
    for &min_dist in &plan.min_dist {
        let cell = format!("{group}-md{min_dist}");
        let params = UmapParams {
            n_neighbors,
            min_dist,
            n_epochs: plan.n_epochs,
            seed: plan.seed,
            metric: plan.metric,
            parallel,
            ..UmapParams::default()
        };
        let embedded = match &cached {
            Some(g) => g.embed(&params),
            None => prepare().and_then(|g| g.embed(&params)),
        };
        let mut e = match embedded {
            Ok(e) => e,
            Err(err) => {
                part.fail(&d.tag, "umap", Some(cell), err);
                continue;
            }
        };
        e.source_tag = d.tag.clone();
        let low = e.as_features().expect("embedding ids are unique");
        let (mut m, errors) = score(plan, &high, &low, set);
        m.embedding = cell.clone();
        for (what, msg) in errors {
            part.fail(&d.tag, "metrics", Some(format!("{cell}/{what}")), msg);
        }
        part.metrics.push(m);
        if plan.probe_on_embedding {
            for target in &plan.probe_targets {
                match probe_on_embedding(&e, &d.labels, target, &d.splits, &plan.probe) {
                    Ok(result) => part.probes.push(ProbeEntry {
                        dataset: d.tag.clone(),
                        input: ProbeInput::Embedding,
                        embedding: Some(cell.clone()),
                        result,
                    }),
                    Err(err) => part.fail(&d.tag, "probe", Some(format!("{cell}/{target}")), err),
                }
            }
        }
        part.embeddings.push(EmbeddingEntry {
            id: cell,
            dataset: d.tag.clone(),
            sample_set: set.id.clone(),
            source,
            params: e.params.clone(),
            coords: e.coords.iter().flat_map(|c| [c[0] as f64, c[1] as f64]).collect(),
        });
    }
    part
}

fn run_inner(plan: &RunPlan) -> Result<ReportDocument> {
    plan.validate()?;
    let generated_at = plan
        .generated_at
        .clone()
        .unwrap_or_else(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
    let mut doc = ReportDocument::empty(generated_at);
    let mut all = Part::default();
    let mut loaded = Vec::new();
    for manifest in &plan.datasets {
        match load(plan, manifest) {
            Ok((d, summary)) => {
                doc.datasets.push(summary);
                loaded.push(d);
            }
            Err(e) => all.fail(&manifest.tag, "load", None, e),
        }
    }

    let mut tasks = Vec::new();
    for (di, d) in loaded.iter().enumerate() {
        let sources: &[EmbeddingSource] = if d.raw.is_some() {
            &[EmbeddingSource::Features, EmbeddingSource::Raw]
        } else {
            &[EmbeddingSource::Features]
        };
        for s in 0..d.samples.len() {
            for &source in sources {
                for &k in &plan.n_neighbors {
                    tasks.push((di, source, s, k));
                }
            }
        }
    }
    let probe_parts: Vec<Part> = if plan.deterministic {
        loaded.iter().map(|d| feature_probes(plan, d)).collect()
    } else {
        loaded.par_iter().map(|d| feature_probes(plan, d)).collect()
    };
    let cell = |&(di, source, s, k): &(usize, EmbeddingSource, usize, usize)| graph_cells(plan, &loaded[di], source, s, k);
    let cell_parts: Vec<Part> = if plan.deterministic {
        tasks.iter().map(cell).collect()
    } else {
        tasks.par_iter().map(cell).collect()
    };
    for p in probe_parts.into_iter().chain(cell_parts) {
        all.extend(p);
    }
    doc.embeddings = all.embeddings;
    doc.metrics = all.metrics;
    doc.probes = all.probes;
    doc.failures = all.failures;
    doc.validate()?;
    Ok(doc)
}

/// Executes `plan`. Stage failures are recorded in the report; only an
/// invalid plan is an error.
pub fn run(plan: &RunPlan) -> Result<ReportDocument> {
    if plan.deterministic {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        pool.install(|| run_inner(plan))
    } else {
        run_inner(plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureFormat;
    use crate::synth::{gen_blobs, inject_batch_effect, write_corpus, BatchEffectSpec, BlobSpec};

    fn corpus(dir: &std::path::Path, n: usize, seed: u64) -> Manifest {
        let (m, t) = gen_blobs(&BlobSpec { n_samples: n, dim: 8, n_classes: 3, seed, ..Default::default() }).unwrap();
        let (m, t) = inject_batch_effect(&m, &t, &BatchEffectSpec { n_sites: 3, seed, ..Default::default() }).unwrap();
        let (f, l) = write_corpus(&m, &t, dir, FeatureFormat::Fbin).unwrap();
        Manifest::new(format!("tag{seed}"), f, l)
    }

    fn small_plan(manifests: Vec<Manifest>) -> RunPlan {
        RunPlan {
            datasets: manifests,
            n_epochs: Some(30),
            probe_targets: vec!["site".into()],
            probe: ProbeConfig { epochs: 3, runs: 2, ..Default::default() },
            deterministic: true,
            generated_at: Some("fixed".into()),
            ..Default::default()
        }
    }

    #[test]
    fn smallest_plan_yields_one_of_each() {
        let dir = tempfile::tempdir().unwrap();
        let mut plan = small_plan(vec![corpus(dir.path(), 120, 1)]);
        plan.probe_on_embedding = false;
        let doc = run(&plan).unwrap();
        assert_eq!(doc.embeddings.len(), 1);
        assert_eq!(doc.metrics.len(), 1);
        assert_eq!(doc.probes.len(), 1);
        assert!(doc.failures.is_empty(), "{:?}", doc.failures);
        assert_eq!(doc.datasets[0].sample_sets.len(), 1);
        assert_eq!(doc.datasets[0].sample_sets[0].ids.len(), 120);
        assert_eq!(doc.probes[0].result.runs.len(), 2);
    }

    #[test]
    fn grid_and_sizes_expand() {
        let dir = tempfile::tempdir().unwrap();
        let mut plan = small_plan(vec![corpus(dir.path(), 150, 2)]);
        plan.n_neighbors = vec![5, 10];
        plan.min_dist = vec![0.05, 0.5];
        plan.sample_sizes = vec![60, 150];
        let doc = run(&plan).unwrap();
        assert_eq!(doc.embeddings.len(), 8);
        assert_eq!(doc.metrics.len(), 8);
        // One feature probe plus one per embedding.
        assert_eq!(doc.probes.len(), 9);
        assert_eq!(doc.datasets[0].sample_sets.len(), 2);
    }

    #[test]
    fn cell_failures_do_not_abort_the_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut plan = small_plan(vec![corpus(dir.path(), 100, 3)]);
        plan.n_neighbors = vec![5, 200];
        plan.sample_sizes = vec![];
        let doc = run(&plan).unwrap();
        assert_eq!(doc.embeddings.len(), 1);
        assert!(doc.failures.iter().any(|f| f.stage == "knn"));
    }

    #[test]
    fn missing_dataset_is_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let good = corpus(dir.path(), 100, 4);
        let bad = Manifest::new("gone", dir.path().join("nope.fbin"), dir.path().join("labels.csv"));
        let doc = run(&small_plan(vec![good, bad])).unwrap();
        assert_eq!(doc.datasets.len(), 1);
        assert_eq!(doc.failures.len(), 1);
        assert_eq!(doc.failures[0].stage, "load");
    }

    #[test]
    fn caching_does_not_change_results() {
        let dir = tempfile::tempdir().unwrap();
        let mut plan = small_plan(vec![corpus(dir.path(), 100, 5)]);
        plan.min_dist = vec![0.1, 0.3];
        let a = run(&plan).unwrap();
        plan.cache_graphs = false;
        let b = run(&plan).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn plan_validation() {
        let dir = tempfile::tempdir().unwrap();
        let m = corpus(dir.path(), 100, 6);
        let mut plan = small_plan(vec![m.clone()]);
        plan.sample_sizes = vec![10];
        assert!(run(&plan).is_err());
        let mut plan = small_plan(vec![m.clone(), m]);
        plan.sample_sizes = vec![50];
        assert!(run(&plan).is_err());
        assert!(run(&RunPlan::default()).is_err());
    }

    #[test]
    fn sizes_are_capped_and_deduplicated() {
        let plan = RunPlan::default();
        assert_eq!(plan.sizes_for(5000), vec![5000]);
        assert_eq!(plan.sizes_for(50_000), vec![10_000, 50_000]);
        assert_eq!(plan.sizes_for(200_000), vec![10_000, 100_000]);
    }
}
