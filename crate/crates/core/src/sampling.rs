//! Subsampling, top-k class balancing and group-aware splits.
//!
//! All randomness is drawn from seeded generators and applied to rows in
//! id-sorted order, so results do not depend on input row order.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, LabelTable, Partition, SplitAssignment, MISSING};
use crate::error::{Error, Result};
use crate::rng;

/// Label of each row of `m` in `column`; ids unknown to `t` map to [`MISSING`].
fn row_labels<'a>(m: &FeatureMatrix, t: &'a LabelTable, column: &str) -> Result<Vec<&'a str>> {
    let values = t.column(column)?;
    Ok(m.ids()
        .iter()
        .map(|id| t.position(id).map_or(MISSING, |r| values[r].as_str()))
        .collect())
}

/// Row indices (ascending) of a seeded subsample of size `n`.
///
/// With `stratify_by`, each category keeps a share proportional to its size,
/// rounded by largest remainder (ties go to the lexicographically smaller
/// category).
pub fn subsample_indices(
    m: &FeatureMatrix,
    t: &LabelTable,
    n: usize,
    seed: u64,
    stratify_by: Option<&str>,
) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::invalid("subsample size must be at least 1"));
    }
    let labels = stratify_by.map(|c| row_labels(m, t, c)).transpose()?;
    let total = m.n_samples();
    if n >= total {
        return Ok((0..total).collect());
    }
    let order = rng::id_order(m.ids());
    let mut rng = rng::seeded(seed);
    let mut picked = match labels {
        None => {
            let mut order = order;
            order.shuffle(&mut rng);
            order.truncate(n);
            order
        }
        Some(labels) => {
            let mut strata: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for i in order {
                strata.entry(labels[i]).or_default().push(i);
            }
            let counts: Vec<usize> = strata.values().map(Vec::len).collect();
            let quotas = largest_remainder(&counts, n);
            let mut picked = Vec::with_capacity(n);
            for (rows, q) in strata.into_values().zip(quotas) {
                let mut rows = rows;
                rows.shuffle(&mut rng);
                picked.extend_from_slice(&rows[..q]);
            }
            picked
        }
    };
    picked.sort_unstable();
    Ok(picked)
}

pub fn subsample(
    m: &FeatureMatrix,
    t: &LabelTable,
    n: usize,
    seed: u64,
    stratify_by: Option<&str>,
) -> Result<FeatureMatrix> {
    Ok(m.select_rows(&subsample_indices(m, t, n, seed, stratify_by)?))
}

/// Splits `n` into integer shares proportional to `counts`. Shares never
/// exceed their count when `n <= sum(counts)`.
pub fn largest_remainder(counts: &[usize], n: usize) -> Vec<usize> {
    let total: u128 = counts.iter().map(|&c| c as u128).sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    let mut quotas = Vec::with_capacity(counts.len());
    let mut remainders = Vec::with_capacity(counts.len());
    for (i, &c) in counts.iter().enumerate() {
        let num = n as u128 * c as u128;
        quotas.push((num / total) as usize);
        remainders.push((num % total, i));
    }
    let mut left = n - quotas.iter().sum::<usize>();
    // Larger remainder first, earlier (lexicographically smaller) index on ties.
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in &remainders {
        if left == 0 {
            break;
        }
        if quotas[i] < counts[i] {
            quotas[i] += 1;
            left -= 1;
        }
    }
    quotas
}

/// Keep the `top_k` most frequent categories of `column`, each downsampled to
/// the same count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceSpec {
    pub column: String,
    pub top_k: usize,
    pub per_class_cap: Option<usize>,
    pub seed: u64,
}

/// The `k` categories with most samples among `labels`, most frequent first,
/// ties by name. [`MISSING`] never counts.
fn top_categories<'a>(labels: impl Iterator<Item = &'a str>, k: usize) -> Result<Vec<&'a str>> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels.filter(|&l| l != MISSING) {
        *counts.entry(l).or_default() += 1;
    }
    if counts.len() < k {
        return Err(Error::InsufficientData(format!(
            "need {k} non-empty categories, found {}",
            counts.len()
        )));
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    Ok(ranked.into_iter().take(k).map(|(c, _)| c).collect())
}

fn validate_balance(spec: &BalanceSpec) -> Result<()> {
    if spec.top_k == 0 {
        return Err(Error::invalid("top_k must be at least 1"));
    }
    Ok(())
}

/// Row indices (ascending) kept by top-k selection and balancing.
pub fn top_k_balance_indices(m: &FeatureMatrix, t: &LabelTable, spec: &BalanceSpec) -> Result<Vec<usize>> {
    validate_balance(spec)?;
    let labels = row_labels(m, t, &spec.column)?;
    let kept = top_categories(labels.iter().copied(), spec.top_k)?;
    let mut by_class: BTreeMap<&str, Vec<usize>> = kept.iter().map(|&c| (c, Vec::new())).collect();
    for i in rng::id_order(m.ids()) {
        if let Some(rows) = by_class.get_mut(labels[i]) {
            rows.push(i);
        }
    }
    let smallest = by_class.values().map(Vec::len).min().unwrap_or(0);
    let per_class = spec.per_class_cap.map_or(smallest, |cap| cap.min(smallest));
    let mut rng = rng::seeded(spec.seed);
    let mut picked = Vec::with_capacity(per_class * by_class.len());
    for rows in by_class.values_mut() {
        rows.shuffle(&mut rng);
        picked.extend_from_slice(&rows[..per_class]);
    }
    picked.sort_unstable();
    Ok(picked)
}

pub fn select_top_k_balance(m: &FeatureMatrix, t: &LabelTable, spec: &BalanceSpec) -> Result<FeatureMatrix> {
    Ok(m.select_rows(&top_k_balance_indices(m, t, spec)?))
}

/// Balances each partition of `split` separately. The kept categories are the
/// top-k over all split ids, so every partition uses the same class set.
pub fn balance_split(split: &SplitAssignment, t: &LabelTable, spec: &BalanceSpec) -> Result<SplitAssignment> {
    validate_balance(spec)?;
    let values = t.column(&spec.column)?;
    let label_of = |id: &str| t.position(id).map_or(MISSING, |r| values[r].as_str());
    let kept = top_categories(split.assignment.keys().map(|id| label_of(id)), spec.top_k)?;

    let mut out = SplitAssignment {
        assignment: BTreeMap::new(),
        seed: split.seed,
        ratios: split.ratios,
        group_column: split.group_column.clone(),
        warnings: split.warnings.clone(),
    };
    for p in Partition::ALL {
        let mut by_class: BTreeMap<&str, Vec<&str>> = kept.iter().map(|&c| (c, Vec::new())).collect();
        // `assignment` iterates in id order.
        for id in split.ids_in(p) {
            if let Some(ids) = by_class.get_mut(label_of(id)) {
                ids.push(id);
            }
        }
        let smallest = by_class.values().map(Vec::len).min().unwrap_or(0);
        let per_class = spec.per_class_cap.map_or(smallest, |cap| cap.min(smallest));
        if per_class == 0 && by_class.values().any(|v| !v.is_empty()) {
            out.warnings.push(format!(
                "{p}: a kept {} category has no samples, partition emptied by balancing",
                spec.column
            ));
        }
        let mut rng = rng::stream(spec.seed, p.index() as u64);
        for ids in by_class.values_mut() {
            ids.shuffle(&mut rng);
            for id in &ids[..per_class] {
                out.assignment.insert(id.to_string(), p);
            }
        }
    }
    Ok(out)
}

fn validate_ratios(ratios: [f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::invalid(format!("ratios must be non-negative, got {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("ratios must sum to 1, got {sum}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum GroupKey<'a> {
    Value(&'a str),
    /// Samples with a missing group value are their own group.
    Alone(&'a str),
}

/// Assigns every id of `t` to train/validation/test so that all ids sharing
/// a `group_column` value land in the same partition.
///
/// Groups are shuffled with `seed` (starting from name order) and each goes
/// to the partition whose current share of assigned samples is furthest
/// below its target ratio. Without a group column every sample is a group.
pub fn group_stratified_split(
    t: &LabelTable,
    ratios: [f64; 3],
    group_column: Option<&str>,
    seed: u64,
) -> Result<SplitAssignment> {
    validate_ratios(ratios)?;
    let column = group_column.map(|c| t.column(c)).transpose()?;

    let mut groups: BTreeMap<GroupKey<'_>, Vec<&str>> = BTreeMap::new();
    for (row, id) in t.ids().iter().enumerate() {
        let key = match column {
            Some(values) if values[row] != MISSING => GroupKey::Value(values[row].as_str()),
            _ => GroupKey::Alone(id.as_str()),
        };
        groups.entry(key).or_default().push(id.as_str());
    }
    let mut groups: Vec<Vec<&str>> = groups.into_values().collect();
    groups.shuffle(&mut rng::seeded(seed));

    let total = t.len();
    let max_ratio = ratios.iter().cloned().fold(0.0, f64::max);
    let mut warnings = Vec::new();
    if let Some(largest) = groups.iter().map(Vec::len).max() {
        let share = largest as f64 / total as f64;
        if share > max_ratio + 1e-12 {
            warnings.push(format!(
                "largest group holds {:.1}% of samples, above the largest target ratio {:.1}%; targets are unreachable",
                share * 100.0,
                max_ratio * 100.0
            ));
        }
    }

    let mut counts = [0usize; 3];
    let mut assigned = 0usize;
    let mut assignment = BTreeMap::new();
    for members in groups {
        let mut best = None;
        for p in 0..3 {
            if ratios[p] <= 0.0 {
                continue;
            }
            let current = if assigned == 0 {
                0.0
            } else {
                counts[p] as f64 / assigned as f64
            };
            let deficit = ratios[p] - current;
            if best.map_or(true, |(_, d)| deficit > d) {
                best = Some((p, deficit));
            }
        }
        let (p, _) = best.expect("ratios sum to one, so one is positive");
        counts[p] += members.len();
        assigned += members.len();
        for id in members {
            assignment.insert(id.to_string(), Partition::ALL[p]);
        }
    }

    Ok(SplitAssignment {
        assignment,
        seed,
        ratios,
        group_column: group_column.map(str::to_string),
        warnings,
    })
}
