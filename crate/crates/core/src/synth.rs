//! Synthetic corpora with known class structure and optional per-site batch
//! effects.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{FeatureFormat, FeatureMatrix, LabelTable};
use crate::error::{Error, Result};
use crate::{io, rng};

/// Feature width of the large preset.
pub const PRESET_DIM: usize = 1536;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub n_samples: usize,
    pub dim: usize,
    pub n_classes: usize,
    /// Minimum distance between class centers, in units of `within_std`.
    pub class_separation: f64,
    pub within_std: f64,
    pub seed: u64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            dim: 32,
            n_classes: 5,
            class_separation: 10.0,
            within_std: 1.0,
            seed: 0,
        }
    }
}

impl BlobSpec {
    /// Wide preset: 1536 features.
    pub fn preset(n_samples: usize, n_classes: usize, seed: u64) -> Self {
        Self {
            n_samples,
            dim: PRESET_DIM,
            n_classes,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.dim == 0 {
            return Err(Error::invalid("n_classes and dim must be >= 1"));
        }
        if !(self.within_std > 0.0) || !self.within_std.is_finite() {
            return Err(Error::invalid(format!("within_std must be positive, got {}", self.within_std)));
        }
        if !(self.class_separation >= 0.0) || !self.class_separation.is_finite() {
            return Err(Error::invalid("class_separation must be finite and >= 0"));
        }
        Ok(())
    }
}

fn gaussian_unit(rng: &mut rng::Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Class centers along random directions, scaled so the closest pair is
/// exactly `class_separation * within_std` apart.
pub fn blob_centers(spec: &BlobSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let k = spec.n_classes;
    let mut r = rng::stream(spec.seed, 0);
    if k == 1 {
        return Ok(vec![vec![0.0; spec.dim]]);
    }
    let dirs: Vec<Vec<f64>> = (0..k).map(|_| gaussian_unit(&mut r, spec.dim)).collect();
    let mut min_d = f64::INFINITY;
    for i in 0..k {
        for j in i + 1..k {
            let d = dirs[i].iter().zip(&dirs[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            min_d = min_d.min(d);
        }
    }
    if !(min_d > 0.0) {
        // Only reachable with dim 1 and two equal signs; fall back to a line.
        return Ok((0..k)
            .map(|c| {
                let mut v = vec![0.0; spec.dim];
                v[0] = c as f64 * spec.class_separation * spec.within_std;
                v
            })
            .collect());
    }
    let scale = spec.class_separation * spec.within_std / min_d;
    Ok(dirs.into_iter().map(|d| d.into_iter().map(|x| x * scale).collect()).collect())
}

pub fn class_name(c: usize) -> String {
    format!("c{c}")
}

pub fn site_name(s: usize) -> String {
    format!("site{s}")
}

/// Gaussian blobs with a `class` label column. Sample `i` belongs to class
/// `i % n_classes`, so class sizes differ by at most one.
pub fn gen_blobs(spec: &BlobSpec) -> Result<(FeatureMatrix, LabelTable)> {
    let centers = blob_centers(spec)?;
    let n = spec.n_samples;
    let mut r = rng::stream(spec.seed, 1);
    let mut values = Vec::with_capacity(n * spec.dim);
    let mut classes = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % spec.n_classes;
        for &mu in &centers[c] {
            let z: f64 = StandardNormal.sample(&mut r);
            values.push((mu + spec.within_std * z) as f32);
        }
        classes.push(class_name(c));
    }
    let ids: Vec<String> = (0..n).map(|i| format!("s{i:06}")).collect();
    let m = FeatureMatrix::new(ids.clone(), values, spec.dim)?;
    let t = LabelTable::new(ids, BTreeMap::from([("class".to_string(), classes)]))?;
    Ok((m, t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SiteAssignment {
    /// Each sample draws its site uniformly.
    Uniform,
    /// With probability `skew` a sample goes to site `class % n_sites`,
    /// otherwise to a uniform site.
    Skewed { skew: f64, class_column: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchEffectSpec {
    pub n_sites: usize,
    /// L2 norm of every site offset.
    pub offset_magnitude: f64,
    /// Site scale factors are `1 + u * scale_jitter`, `u` uniform in [-1, 1].
    pub scale_jitter: f64,
    pub seed: u64,
    pub assignment: SiteAssignment,
}

impl Default for BatchEffectSpec {
    fn default() -> Self {
        Self {
            n_sites: 5,
            offset_magnitude: 10.0,
            scale_jitter: 0.0,
            seed: 0,
            assignment: SiteAssignment::Uniform,
        }
    }
}

impl BatchEffectSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_sites == 0 {
            return Err(Error::invalid("n_sites must be >= 1"));
        }
        if !(self.offset_magnitude >= 0.0) || !self.offset_magnitude.is_finite() {
            return Err(Error::invalid("offset_magnitude must be finite and >= 0"));
        }
        if !(self.scale_jitter >= 0.0) || !self.scale_jitter.is_finite() {
            return Err(Error::invalid("scale_jitter must be finite and >= 0"));
        }
        if let SiteAssignment::Skewed { skew, .. } = &self.assignment {
            if !(0.0..=1.0).contains(skew) {
                return Err(Error::invalid(format!("skew must lie in [0, 1], got {skew}")));
            }
        }
        Ok(())
    }
}

/// Offset vector and scale factor of one site; depends only on the seed and
/// the site index.
pub fn site_transform(spec: &BatchEffectSpec, site: usize, dim: usize) -> (Vec<f64>, f64) {
    let mut r = rng::stream(spec.seed, 1_000 + site as u64);
    let offset = gaussian_unit(&mut r, dim)
        .into_iter()
        .map(|x| x * spec.offset_magnitude)
        .collect();
    let u: f64 = r.random_range(-1.0..=1.0);
    (offset, 1.0 + u * spec.scale_jitter)
}

/// Assigns sites and applies `x' = (x + offset) * scale` per site. Adds a
/// `site` column; ids, other columns and row order are unchanged.
pub fn inject_batch_effect(m: &FeatureMatrix, t: &LabelTable, spec: &BatchEffectSpec) -> Result<(FeatureMatrix, LabelTable)> {
    spec.validate()?;
    let dim = m.dim();
    let class_column = match &spec.assignment {
        SiteAssignment::Skewed { class_column, .. } => Some(class_column.as_str()),
        SiteAssignment::Uniform => None,
    };
    let class_index: BTreeMap<String, usize> = match class_column {
        Some(c) => t.categories(c)?.into_iter().enumerate().map(|(i, c)| (c, i)).collect(),
        None => BTreeMap::new(),
    };

    // Draws happen in id order so the assignment ignores row order.
    let mut r = rng::stream(spec.seed, 0);
    let mut site_of = vec![0usize; m.n_samples()];
    for row in rng::id_order(m.ids()) {
        let id = &m.ids()[row];
        if t.position(id).is_none() {
            return Err(Error::invalid(format!("sample {id:?} has no label row")));
        }
        let uniform = r.random_range(0..spec.n_sites);
        site_of[row] = match (&spec.assignment, class_column) {
            (SiteAssignment::Skewed { skew, .. }, Some(col)) => {
                let u: f64 = r.random();
                match t.value(id, col) {
                    Some(c) if u < *skew && c != crate::data::MISSING => class_index[c] % spec.n_sites,
                    _ => uniform,
                }
            }
            _ => uniform,
        };
    }

    let values = if spec.offset_magnitude == 0.0 && spec.scale_jitter == 0.0 {
        m.values().to_vec()
    } else {
        let transforms: Vec<(Vec<f64>, f64)> = (0..spec.n_sites).map(|s| site_transform(spec, s, dim)).collect();
        let mut out = Vec::with_capacity(m.values().len());
        for (row, &site) in site_of.iter().enumerate() {
            let (offset, scale) = &transforms[site];
            out.extend(m.row(row).iter().zip(offset).map(|(&x, o)| ((x as f64 + o) * scale) as f32));
        }
        out
    };

    let site_column: Vec<String> = t
        .ids()
        .iter()
        .map(|id| match m.position(id) {
            Some(row) => site_name(site_of[row]),
            None => crate::data::MISSING.to_string(),
        })
        .collect();
    let m2 = FeatureMatrix::new(m.ids().to_vec(), values, dim)?;
    Ok((m2, t.with_column("site", site_column)?))
}

/// Writes `features.<ext>` and `labels.csv` into `dir`.
pub fn write_corpus(m: &FeatureMatrix, t: &LabelTable, dir: &Path, format: FeatureFormat) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let features = dir.join(format!("features.{format}"));
    let labels = dir.join("labels.csv");
    io::write_features(m, &features, format)?;
    io::write_labels(t, &labels)?;
    Ok((features, labels))
}
