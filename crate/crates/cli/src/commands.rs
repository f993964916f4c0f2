use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;

use finspect::data::FeatureSource;
use finspect::probe::{train_probe, ProbeConfig};
use finspect::report::{run, write_report, RunPlan};
use finspect::sampling::{balance_split, group_stratified_split, top_k_balance_indices, BalanceSpec};
use finspect::synth::{self, BatchEffectSpec, BlobSpec, SiteAssignment};
use finspect::umap::UmapParams;
use finspect::{io, join, validate_features, FeatureFormat, FeatureMatrix, LabelTable, Manifest, Metric, SplitAssignment};

use crate::{Cli, Command, Global, UsageError};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn format_of(path: &Path, explicit: Option<FeatureFormat>) -> FeatureFormat {
    explicit.unwrap_or_else(|| FeatureFormat::from_path(path))
}

fn load_features(path: &Path, format: Option<FeatureFormat>, normalize: bool) -> Result<FeatureMatrix> {
    let m = io::load_features(path, format_of(path, format), None)?;
    Ok(if normalize { m.l2_normalized() } else { m })
}

fn parse_ratios(s: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("ratios must be three numbers, got {s:?}")))?;
    <[f64; 3]>::try_from(parts).map_err(|_| usage(format!("ratios must be three numbers, got {s:?}")))
}

fn splits_for(t: &LabelTable, ratios: [f64; 3], group: Option<&str>, seed: u64, runs: usize, balance: Option<&BalanceSpec>) -> Result<Vec<SplitAssignment>> {
    (0..runs as u64)
        .map(|r| {
            let split = group_stratified_split(t, ratios, group, seed.wrapping_add(r))?;
            Ok(match balance {
                Some(b) => balance_split(&split, t, b)?,
                None => split,
            })
        })
        .collect()
}

/// `COLUMN:K[:CAP]`
fn parse_balance(s: &str, seed: u64) -> Result<BalanceSpec> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || usage(format!("balance must look like COLUMN:K or COLUMN:K:CAP, got {s:?}"));
    if !(2..=3).contains(&parts.len()) || parts[0].is_empty() {
        return Err(bad());
    }
    Ok(BalanceSpec {
        column: parts[0].to_string(),
        top_k: parts[1].parse().map_err(|_| bad())?,
        per_class_cap: parts.get(2).map(|c| c.parse()).transpose().map_err(|_| bad())?,
        seed,
    })
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| usage(format!("bad {what} {p:?}"))))
        .collect()
}

/// `N[,N..]:D[,D..]`, the cross product of n_neighbors and min_dist values.
fn parse_grid(specs: &[String]) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut nn = Vec::new();
    let mut md = Vec::new();
    for s in specs {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| usage(format!("grid cells look like 15:0.1, got {s:?}")))?;
        for k in parse_list::<usize>(a, "n_neighbors")? {
            if !nn.contains(&k) {
                nn.push(k);
            }
        }
        for d in parse_list::<f64>(b, "min_dist")? {
            if !md.contains(&d) {
                md.push(d);
            }
        }
    }
    Ok((nn, md))
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory for features and labels.csv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    /// Minimum center distance in units of --std.
    #[arg(long, default_value_t = 10.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub std: f64,
    /// Number of sites; 0 disables the site column.
    #[arg(long, default_value_t = 0)]
    pub sites: usize,
    /// Site offset norm in units of --std.
    #[arg(long, default_value_t = 0.0)]
    pub offset: f64,
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    /// Probability that a sample's site follows its class.
    #[arg(long)]
    pub skew: Option<f64>,
    #[arg(long, value_enum, default_value = "fbin")]
    pub format: FormatArg,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum FormatArg {
    Csv,
    Fbin,
}

impl From<FormatArg> for FeatureFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => FeatureFormat::Csv,
            FormatArg::Fbin => FeatureFormat::Fbin,
        }
    }
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum MetricArg {
    Euclidean,
    Cosine,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Euclidean => Metric::Euclidean,
            MetricArg::Cosine => Metric::Cosine,
        }
    }
}

fn gen(g: &Global, a: &GenArgs) -> Result<()> {
    let spec = BlobSpec {
        n_samples: a.n,
        dim: a.dim,
        n_classes: a.classes,
        class_separation: a.separation,
        within_std: a.std,
        seed: g.seed,
    };
    let (mut m, mut t) = synth::gen_blobs(&spec)?;
    if a.sites > 0 {
        let effect = BatchEffectSpec {
            n_sites: a.sites,
            offset_magnitude: a.offset * a.std,
            scale_jitter: a.jitter,
            seed: g.seed.wrapping_add(1),
            assignment: match a.skew {
                Some(skew) => SiteAssignment::Skewed {
                    skew,
                    class_column: "class".into(),
                },
                None => SiteAssignment::Uniform,
            },
        };
        (m, t) = synth::inject_batch_effect(&m, &t, &effect)?;
    }
    let (f, l) = synth::write_corpus(&m, &t, &a.out, a.format.into())?;
    println!("wrote {} and {}", f.display(), l.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub labels: PathBuf,
    /// train,validation,test fractions.
    #[arg(long, default_value = "0.7,0.15,0.15")]
    pub ratios: String,
    /// Keep samples sharing this column's value in one partition.
    #[arg(long)]
    pub group: Option<String>,
    /// Output CSV with `id,partition` rows.
    #[arg(long)]
    pub out: PathBuf,
}

fn split(g: &Global, a: &SplitArgs) -> Result<()> {
    let t = io::load_labels(&a.labels)?;
    let s = group_stratified_split(&t, parse_ratios(&a.ratios)?, a.group.as_deref(), g.seed)?;
    for w in &s.warnings {
        log::warn!("{w}");
    }
    io::write_split(&s, &a.out)?;
    let [tr, va, te] = s.counts();
    println!("train {tr}  validation {va}  test {te}");
    Ok(())
}

#[derive(Debug, Args)]
pub struct BalanceArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub column: String,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    /// Upper bound on samples kept per category.
    #[arg(long)]
    pub cap: Option<usize>,
    /// Output directory for the balanced features and labels.csv.
    #[arg(long)]
    pub out: PathBuf,
}

fn balance(g: &Global, a: &BalanceArgs) -> Result<()> {
    let format = FeatureFormat::from_path(&a.features);
    let m = load_features(&a.features, None, false)?;
    let t = io::load_labels(&a.labels)?;
    let spec = BalanceSpec {
        column: a.column.clone(),
        top_k: a.top_k,
        per_class_cap: a.cap,
        seed: g.seed,
    };
    let rows = top_k_balance_indices(&m, &t, &spec)?;
    let kept = m.select_rows(&rows);
    let labels = t.select_ids(kept.ids())?;
    let (f, l) = synth::write_corpus(&kept, &labels, &a.out, format)?;
    println!("kept {} of {} samples; wrote {} and {}", kept.n_samples(), m.n_samples(), f.display(), l.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct UmapArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value_t = 15)]
    pub n_neighbors: usize,
    #[arg(long, default_value_t = 0.1)]
    pub min_dist: f64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_enum, default_value = "euclidean")]
    pub metric: MetricArg,
    #[arg(long)]
    pub normalize: bool,
    /// Lock-free parallel layout (not reproducible).
    #[arg(long)]
    pub parallel_layout: bool,
    /// Output JSON file.
    #[arg(long)]
    pub out: PathBuf,
}

fn umap(g: &Global, a: &UmapArgs) -> Result<()> {
    let m = load_features(&a.features, None, a.normalize)?;
    let p = UmapParams {
        n_neighbors: a.n_neighbors,
        min_dist: a.min_dist,
        n_epochs: a.epochs,
        metric: a.metric.into(),
        seed: g.seed,
        parallel: a.parallel_layout && !g.deterministic,
        ..UmapParams::default()
    };
    let mut e = finspect::umap::umap(&m, &p)?;
    e.source_tag = tag_of(&a.features);
    let json = serde_json::to_string(&e)?;
    std::fs::write(&a.out, json).with_context(|| format!("writing {}", a.out.display()))?;
    println!("embedded {} samples into {}", e.ids.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Label column to probe; repeatable.
    #[arg(long = "target", required = true)]
    pub targets: Vec<String>,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 3)]
    pub runs: usize,
    #[arg(long, default_value = "0.7,0.15,0.15")]
    pub ratios: String,
    #[arg(long)]
    pub group: Option<String>,
    /// Balance each split: COLUMN:K or COLUMN:K:CAP.
    #[arg(long)]
    pub balance: Option<String>,
    /// Train on raw feature values without standardization.
    #[arg(long)]
    pub no_standardize: bool,
    #[arg(long)]
    pub normalize: bool,
    /// Optional JSON output with every run.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn probe(g: &Global, a: &ProbeArgs) -> Result<()> {
    let m = load_features(&a.features, None, a.normalize)?;
    let t = io::load_labels(&a.labels)?;
    let cfg = ProbeConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        runs: a.runs,
        seed: g.seed,
        standardize: !a.no_standardize,
        ..ProbeConfig::default()
    };
    let balance = a.balance.as_deref().map(|b| parse_balance(b, g.seed)).transpose()?;
    let splits = splits_for(&t, parse_ratios(&a.ratios)?, a.group.as_deref(), g.seed, a.runs, balance.as_ref())?;
    let mut results = Vec::new();
    for target in &a.targets {
        let aligned = join(&m, &t, target)?;
        let r = train_probe(target, &aligned, &splits, &cfg)?;
        println!(
            "{target}: accuracy {:.4} +/- {:.4} (chance {:.4}, {} runs)",
            r.mean_accuracy,
            r.std_accuracy,
            r.chance_baseline,
            r.runs.len()
        );
        results.push(r);
    }
    if let Some(out) = &a.out {
        std::fs::write(out, serde_json::to_string(&results)?).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Feature file (with --labels); alternative to --manifest.
    #[arg(long, required_unless_present = "manifest")]
    pub features: Option<PathBuf>,
    #[arg(long, requires = "features")]
    pub labels: Option<PathBuf>,
    /// Tag of the --features dataset (default: file stem).
    #[arg(long)]
    pub tag: Option<String>,
    /// Baseline features of the same samples, embedded side by side.
    #[arg(long)]
    pub raw_features: Option<PathBuf>,
    /// Manifest JSON; repeatable, one per training snapshot.
    #[arg(long)]
    pub manifest: Vec<PathBuf>,
    /// Label column to probe; repeatable.
    #[arg(long = "probe")]
    pub probes: Vec<String>,
    /// Grid cells N:D, comma lists allowed (5,15:0.1,0.5); repeatable.
    #[arg(long = "umap-grid")]
    pub umap_grid: Vec<String>,
    /// Skip UMAP entirely.
    #[arg(long, conflicts_with = "umap_grid")]
    pub no_umap: bool,
    /// Comma-separated sample sizes (default 10000,100000, capped at n).
    #[arg(long)]
    pub sample_sizes: Option<String>,
    #[arg(long)]
    pub stratify: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_enum, default_value = "euclidean")]
    pub metric: MetricArg,
    /// Label columns scored by silhouette (default all); comma-separated.
    #[arg(long)]
    pub metric_columns: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub knn_k: usize,
    #[arg(long, default_value_t = 100_000)]
    pub cpd_pairs: usize,
    #[arg(long, default_value_t = 5_000)]
    pub metric_cap: usize,
    #[arg(long, default_value_t = 20)]
    pub probe_epochs: usize,
    #[arg(long, default_value_t = 3)]
    pub probe_runs: usize,
    #[arg(long, default_value = "0.7,0.15,0.15")]
    pub ratios: String,
    #[arg(long)]
    pub group: Option<String>,
    /// Balance each split: COLUMN:K or COLUMN:K:CAP.
    #[arg(long)]
    pub balance: Option<String>,
    /// Do not probe embedding coordinates.
    #[arg(long)]
    pub no_embedding_probe: bool,
    #[arg(long)]
    pub normalize: bool,
    /// Recompute the kNN graph for every grid cell.
    #[arg(long)]
    pub no_cache: bool,
    #[arg(long)]
    pub parallel_layout: bool,
    /// Prebuilt explorer bundle (index.html + assets/) to copy.
    #[arg(long)]
    pub assets: Option<PathBuf>,
    /// Fixed timestamp, for reproducible output.
    #[arg(long)]
    pub timestamp: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

fn tag_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "features".into())
}

fn source(path: &Path) -> FeatureSource {
    FeatureSource {
        path: path.to_path_buf(),
        format: FeatureFormat::from_path(path),
    }
}

fn report(g: &Global, a: &ReportArgs) -> Result<()> {
    let mut datasets = Vec::new();
    if let Some(f) = &a.features {
        let labels = a.labels.clone().ok_or_else(|| usage("--features needs --labels"))?;
        let mut m = Manifest::new(a.tag.clone().unwrap_or_else(|| tag_of(f)), f, labels);
        m.raw_features = a.raw_features.as_deref().map(source);
        datasets.push(m);
    } else if a.raw_features.is_some() {
        return Err(usage("--raw-features goes with --features; put raw_features in the manifest instead"));
    }
    for path in &a.manifest {
        datasets.push(Manifest::load(path)?);
    }
    let (n_neighbors, min_dist) = if a.no_umap {
        (Vec::new(), Vec::new())
    } else if a.umap_grid.is_empty() {
        (vec![15], vec![0.1])
    } else {
        parse_grid(&a.umap_grid)?
    };
    let plan = RunPlan {
        datasets,
        n_neighbors,
        min_dist,
        sample_sizes: a.sample_sizes.as_deref().map(|s| parse_list(s, "sample size")).transpose()?.unwrap_or_default(),
        stratify_by: a.stratify.clone(),
        n_epochs: a.epochs,
        metric: a.metric.into(),
        probe_targets: a.probes.clone(),
        probe: ProbeConfig {
            epochs: a.probe_epochs,
            runs: a.probe_runs,
            seed: g.seed,
            ..ProbeConfig::default()
        },
        probe_on_embedding: !a.no_embedding_probe,
        metric_columns: a.metric_columns.as_deref().map(|s| parse_list(s, "column")).transpose()?.unwrap_or_default(),
        knn_k: a.knn_k,
        cpd_pairs: a.cpd_pairs,
        metric_sample_cap: a.metric_cap,
        split_ratios: parse_ratios(&a.ratios)?,
        group_column: a.group.clone(),
        balance: a.balance.as_deref().map(|b| parse_balance(b, g.seed)).transpose()?,
        normalize: a.normalize,
        seed: g.seed,
        cache_graphs: !a.no_cache,
        deterministic: g.deterministic,
        parallel_layout: a.parallel_layout,
        generated_at: a.timestamp.clone(),
        ..RunPlan::default()
    };
    let doc = run(&plan)?;
    write_report(&doc, &a.out, a.assets.as_deref())?;
    print!("{}", finspect::report::render_summary(&doc));
    if !doc.failures.is_empty() {
        log::warn!("{} stage(s) failed; see the failures section", doc.failures.len());
    }
    // Cell failures are part of the report; unreadable inputs fail the run.
    if let Some(f) = doc.failures.iter().find(|f| f.stage == "load") {
        anyhow::bail!("dataset {}: {}", f.dataset, f.message);
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Feature file to check (csv or fbin).
    #[arg(long, required_unless_present = "report")]
    pub features: Option<PathBuf>,
    /// Expected SHA-256 of the feature file.
    #[arg(long, requires = "features")]
    pub checksum: Option<String>,
    /// report.json to check against the schema.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn validate(a: &ValidateArgs) -> Result<()> {
    if let Some(f) = &a.features {
        let format = FeatureFormat::from_path(f);
        if let Some(expected) = &a.checksum {
            let found = io::file_checksum(f)?;
            if !found.eq_ignore_ascii_case(expected) {
                return Err(finspect::Error::Checksum {
                    path: f.clone(),
                    expected: expected.clone(),
                    found,
                }
                .into());
            }
        }
        let raw = io::read_raw_features(f, format)?;
        let verdict = validate_features(&raw);
        if !verdict.is_ok() {
            return Err(finspect::Error::InvalidFeatures(verdict)).with_context(|| f.display().to_string());
        }
        println!("{}: ok, {} rows x {} features", f.display(), raw.ids.len(), raw.dim);
    }
    if let Some(r) = &a.report {
        let text = std::fs::read_to_string(r).map_err(|e| finspect::Error::Io { path: r.clone(), source: e })?;
        let doc = finspect::report::ReportDocument::from_json(&text).with_context(|| r.display().to_string())?;
        println!(
            "{}: ok, version {}, {} embeddings, {} probes",
            r.display(),
            doc.version,
            doc.embeddings.len(),
            doc.probes.len()
        );
    }
    Ok(())
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Gen(a) => gen(g, a),
        Command::Split(a) => split(g, a),
        Command::Balance(a) => balance(g, a),
        Command::Umap(a) => umap(g, a),
        Command::Probe(a) => probe(g, a),
        Command::Report(a) => report(g, a),
        Command::Validate(a) => validate(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let (nn, md) = parse_grid(&["15:0.1".into()]).unwrap();
        assert_eq!((nn, md), (vec![15], vec![0.1]));
        let (nn, md) = parse_grid(&["5,15:0.1,0.5".into(), "15:0.25".into()]).unwrap();
        assert_eq!(nn, vec![5, 15]);
        assert_eq!(md, vec![0.1, 0.5, 0.25]);
        assert!(parse_grid(&["15".into()]).is_err());
        assert!(parse_grid(&["x:0.1".into()]).is_err());
    }

    #[test]
    fn ratio_and_balance_parsing() {
        assert_eq!(parse_ratios("0.7,0.15,0.15").unwrap(), [0.7, 0.15, 0.15]);
        assert!(parse_ratios("0.5,0.5").is_err());
        let b = parse_balance("tss:5:100", 3).unwrap();
        assert_eq!((b.column.as_str(), b.top_k, b.per_class_cap, b.seed), ("tss", 5, Some(100), 3));
        assert!(parse_balance("tss", 0).is_err());
    }
}
