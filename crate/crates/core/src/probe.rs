//! Linear probes: one softmax layer trained with Adam on frozen features.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{join, Aligned, EmbeddingResult, LabelTable, ProbeResult, ProbeRun, SplitAssignment};
#[cfg(doc)]
use crate::data::MISSING;
use crate::error::{Error, Result};
use crate::rng;

/// Samples per gradient chunk. Chunks are reduced in index order, so the
/// result does not depend on the thread count.
const GRAD_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub runs: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Centre and scale each feature with training-partition statistics
    /// before fitting. The model family is unchanged; optimization is not
    /// held back by offsets in the raw features.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 256,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            runs: 3,
            seed: 0,
            shuffle: true,
            standardize: true,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.runs == 0 {
            return Err(Error::invalid("epochs, batch_size and runs must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::invalid("Adam constants out of range"));
        }
        Ok(())
    }
}

/// `logits = W x + b` with `W` stored row-major as `m x n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub classes: Vec<String>,
    pub n_features: usize,
}

impl ProbeModel {
    pub fn zeros(classes: Vec<String>, n_features: usize) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "a probe needs at least 2 classes, got {}",
                classes.len()
            )));
        }
        Ok(Self {
            weights: vec![0.0; classes.len() * n_features],
            bias: vec![0.0; classes.len()],
            classes,
            n_features,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    fn logits_into(&self, x: &[f32], out: &mut [f64]) {
        let n = self.n_features;
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.bias[c] + dot(&self.weights[c * n..(c + 1) * n], x);
        }
    }

    /// Class index per row of `x` (row-major, `n_features` columns).
    pub fn predict(&self, x: &[f32]) -> Result<Vec<usize>> {
        let n = self.n_features;
        if n == 0 || x.len() % n != 0 {
            return Err(Error::Shape(format!("{} values do not split into rows of {n}", x.len())));
        }
        Ok(x.par_chunks(n)
            .map(|row| {
                let mut z = vec![0.0; self.n_classes()];
                self.logits_into(row, &mut z);
                argmax(&z)
            })
            .collect())
    }
}

fn dot(w: &[f64], x: &[f32]) -> f64 {
    // Four accumulators let the compiler vectorize the loop.
    let mut acc = [0.0f64; 4];
    let mut wc = w.chunks_exact(4);
    let mut xc = x.chunks_exact(4);
    for (a, b) in (&mut wc).zip(&mut xc) {
        for l in 0..4 {
            acc[l] += a[l] * b[l] as f64;
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (a, b) in wc.remainder().iter().zip(xc.remainder()) {
        s += a * *b as f64;
    }
    s
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = i;
        }
    }
    best
}

/// Mean softmax cross-entropy over `rows` and its gradient with respect to
/// `(W, b)`, written into `grad_w` / `grad_b`.
pub fn softmax_ce_loss_and_grad(
    model: &ProbeModel,
    x: &[f32],
    y: &[usize],
    rows: &[usize],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) -> f64 {
    let (m, n) = (model.n_classes(), model.n_features);
    let partials: Vec<(f64, Vec<f64>, Vec<f64>)> = rows
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut gw = vec![0.0; m * n];
            let mut gb = vec![0.0; m];
            let mut z = vec![0.0; m];
            let mut loss = 0.0;
            for &r in chunk {
                let xr = &x[r * n..(r + 1) * n];
                model.logits_into(xr, &mut z);
                let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in z.iter_mut() {
                    *v = (*v - zmax).exp();
                    sum += *v;
                }
                loss += sum.ln() - (z[y[r]].ln());
                for c in 0..m {
                    let g = z[c] / sum - if c == y[r] { 1.0 } else { 0.0 };
                    gb[c] += g;
                    if g != 0.0 {
                        for (w, &xv) in gw[c * n..(c + 1) * n].iter_mut().zip(xr) {
                            *w += g * xv as f64;
                        }
                    }
                }
            }
            (loss, gw, gb)
        })
        .collect();
    grad_w.iter_mut().for_each(|v| *v = 0.0);
    grad_b.iter_mut().for_each(|v| *v = 0.0);
    let mut loss = 0.0;
    for (l, gw, gb) in partials {
        loss += l;
        for (a, b) in grad_w.iter_mut().zip(&gw) {
            *a += b;
        }
        for (a, b) in grad_b.iter_mut().zip(&gb) {
            *a += b;
        }
    }
    let scale = 1.0 / rows.len().max(1) as f64;
    grad_w.iter_mut().for_each(|v| *v *= scale);
    grad_b.iter_mut().for_each(|v| *v *= scale);
    loss * scale
}

/// Mean cross-entropy without the gradient.
pub fn mean_loss(model: &ProbeModel, x: &[f32], y: &[usize], rows: &[usize]) -> f64 {
    let (m, n) = (model.n_classes(), model.n_features);
    let parts: Vec<f64> = rows
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut z = vec![0.0; m];
            let mut loss = 0.0;
            for &r in chunk {
                model.logits_into(&x[r * n..(r + 1) * n], &mut z);
                let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = zmax + z.iter().map(|v| (v - zmax).exp()).sum::<f64>().ln();
                loss += lse - z[y[r]];
            }
            loss
        })
        .collect();
    parts.into_iter().sum::<f64>() / rows.len().max(1) as f64
}

fn accuracy(model: &ProbeModel, x: &[f32], y: &[usize], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let n = model.n_features;
    let hits: usize = rows
        .par_iter()
        .map(|&r| {
            let mut z = vec![0.0; model.n_classes()];
            model.logits_into(&x[r * n..(r + 1) * n], &mut z);
            usize::from(argmax(&z) == y[r])
        })
        .sum();
    hits as f64 / rows.len() as f64
}

/// Per-column `(x - mean) / scale` fitted on a subset of rows. Constant
/// columns keep scale 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[f32], n_features: usize, rows: &[usize]) -> Self {
        let mut mean = vec![0.0; n_features];
        for &r in rows {
            for (m, &v) in mean.iter_mut().zip(&x[r * n_features..(r + 1) * n_features]) {
                *m += v as f64;
            }
        }
        let count = rows.len().max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; n_features];
        for &r in rows {
            for ((s, &v), m) in var.iter_mut().zip(&x[r * n_features..(r + 1) * n_features]).zip(&mean) {
                *s += (v as f64 - m).powi(2);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / count).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &[f32]) -> Vec<f32> {
        let n = self.mean.len();
        x.par_chunks(n)
            .flat_map_iter(|row| {
                row.iter()
                    .zip(&self.mean)
                    .zip(&self.scale)
                    .map(|((&v, m), s)| ((v as f64 - m) / s) as f32)
            })
            .collect()
    }
}

/// Per-epoch record of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    /// Mean cross-entropy on the full training set after each epoch.
    pub train_loss: Vec<f64>,
    pub validation_accuracy: Vec<f64>,
    pub best_epoch: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], cfg: &ProbeConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.adam_beta1.powi(self.t);
        let c2 = 1.0 - cfg.adam_beta2.powi(self.t);
        let mut k = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            for (pi, &gi) in p.iter_mut().zip(g.iter()) {
                self.m[k] = cfg.adam_beta1 * self.m[k] + (1.0 - cfg.adam_beta1) * gi;
                self.v[k] = cfg.adam_beta2 * self.v[k] + (1.0 - cfg.adam_beta2) * gi * gi;
                let mhat = self.m[k] / c1;
                let vhat = self.v[k] / c2;
                *pi -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.adam_eps);
                k += 1;
            }
        }
    }
}

/// Trains from zero weights on `train` rows and keeps the parameters of the
/// epoch with the best accuracy on `validation` rows (earliest on ties; the
/// last epoch when `validation` is empty).
pub fn fit(
    x: &[f32],
    n_features: usize,
    y: &[usize],
    classes: Vec<String>,
    train: &[usize],
    validation: &[usize],
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<(ProbeModel, FitTrace)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InsufficientData("empty training partition".into()));
    }
    let mut model = ProbeModel::zeros(classes, n_features)?;
    let (m, n) = (model.n_classes(), n_features);
    let mut adam = Adam::new(m * n + m);
    let mut gw = vec![0.0; m * n];
    let mut gb = vec![0.0; m];
    let mut order = train.to_vec();
    let mut r = rng::seeded(seed);
    let mut trace = FitTrace {
        train_loss: Vec::with_capacity(cfg.epochs),
        validation_accuracy: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
    };
    let mut best: Option<(f64, ProbeModel)> = None;
    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut r);
        }
        for batch in order.chunks(cfg.batch_size) {
            softmax_ce_loss_and_grad(&model, x, y, batch, &mut gw, &mut gb);
            adam.step(&mut [&mut model.weights, &mut model.bias], &[&gw, &gb], cfg);
        }
        trace.train_loss.push(mean_loss(&model, x, y, train));
        let acc = accuracy(&model, x, y, validation);
        trace.validation_accuracy.push(acc);
        let improves = match &best {
            None => true,
            Some((b, _)) => validation.is_empty() || acc > *b,
        };
        if improves {
            trace.best_epoch = epoch;
            best = Some((acc, model.clone()));
        }
    }
    Ok((best.map(|(_, m)| m).unwrap_or(model), trace))
}

/// Trains `cfg.runs` probes on `aligned`. Run `r` uses seed `cfg.seed + r`
/// and split `splits[r % splits.len()]`. Rows labelled [`MISSING`] and ids
/// absent from the split are ignored; test rows whose class is absent from
/// training are excluded and counted.
pub fn train_probe(label_column: &str, aligned: &Aligned, splits: &[SplitAssignment], cfg: &ProbeConfig) -> Result<ProbeResult> {
    cfg.validate()?;
    if splits.is_empty() {
        return Err(Error::invalid("at least one split is required"));
    }
    let data = aligned.without_missing();
    let x = data.features.values();
    let n = data.features.dim();
    let mut classes: Vec<String> = data.labels.clone();
    classes.sort();
    classes.dedup();
    let class_id = |s: &str| classes.binary_search_by(|c| c.as_str().cmp(s)).unwrap();
    let y: Vec<usize> = data.labels.iter().map(|l| class_id(l)).collect();

    let mut runs = Vec::with_capacity(cfg.runs);
    for r in 0..cfg.runs {
        let split = &splits[r % splits.len()];
        let mut parts: [Vec<usize>; 3] = Default::default();
        for (row, id) in data.features.ids().iter().enumerate() {
            if let Some(p) = split.partition_of(id) {
                parts[p.index()].push(row);
            }
        }
        let [train, validation, test] = parts;
        if train.is_empty() || test.is_empty() {
            return Err(Error::InsufficientData(format!(
                "split {} leaves train={} test={} labelled rows",
                split.seed,
                train.len(),
                test.len()
            )));
        }
        // The model only knows classes seen in training.
        let mut present = vec![false; classes.len()];
        for &row in &train {
            present[y[row]] = true;
        }
        let model_classes: Vec<usize> = (0..classes.len()).filter(|&c| present[c]).collect();
        if model_classes.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "column {label_column:?}: training data holds a single class"
            )));
        }
        let mut local = vec![usize::MAX; classes.len()];
        for (i, &c) in model_classes.iter().enumerate() {
            local[c] = i;
        }
        let y_local: Vec<usize> = y.iter().map(|&c| local[c]).collect();
        let validation: Vec<usize> = validation.into_iter().filter(|&row| present[y[row]]).collect();
        let (kept_test, excluded): (Vec<usize>, Vec<usize>) = test.into_iter().partition(|&row| present[y[row]]);
        if kept_test.is_empty() {
            return Err(Error::InsufficientData("no test rows with a class seen in training".into()));
        }
        let names = model_classes.iter().map(|&c| classes[c].clone()).collect();
        let seed = cfg.seed.wrapping_add(r as u64);
        let scaled;
        let xs: &[f32] = if cfg.standardize {
            scaled = Standardizer::fit(x, n, &train).apply(x);
            &scaled
        } else {
            x
        };
        let (model, trace) = fit(xs, n, &y_local, names, &train, &validation, cfg, seed)?;
        log::debug!("probe {label_column} run {r}: best epoch {}", trace.best_epoch);

        let test_x: Vec<f32> = kept_test.iter().flat_map(|&row| xs[row * n..(row + 1) * n].iter().copied()).collect();
        let pred = model.predict(&test_x)?;
        let mut confusion = vec![vec![0u64; classes.len()]; classes.len()];
        let mut hits = 0usize;
        let mut test_counts = vec![0usize; classes.len()];
        for (&row, &p) in kept_test.iter().zip(&pred) {
            let truth = y[row];
            let predicted = model_classes[p];
            confusion[truth][predicted] += 1;
            test_counts[truth] += 1;
            hits += usize::from(truth == predicted);
        }
        let majority = *test_counts.iter().max().unwrap() as f64 / kept_test.len() as f64;
        runs.push(ProbeRun {
            seed,
            split_seed: split.seed,
            test_accuracy: hits as f64 / kept_test.len() as f64,
            confusion,
            best_epoch: trace.best_epoch,
            best_validation_accuracy: trace.validation_accuracy.get(trace.best_epoch).copied().unwrap_or(0.0),
            excluded_test: excluded.len(),
            chance_baseline: majority.max(1.0 / model_classes.len() as f64),
        });
    }
    Ok(ProbeResult::from_runs(label_column, classes, runs))
}

/// Probe on the 2-D embedding coordinates instead of the features.
pub fn probe_on_embedding(
    e: &EmbeddingResult,
    labels: &LabelTable,
    column: &str,
    splits: &[SplitAssignment],
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    let aligned = join(&e.as_features()?, labels, column)?;
    train_probe(column, &aligned, splits, cfg)
}
