//! Negative-sampling SGD layout of a fuzzy graph in two dimensions.

use std::sync::atomic::{AtomicU32, Ordering};

use rand::Rng as _;
use rayon::prelude::*;

use super::calibrate::FuzzyGraph;
use crate::rng;

pub const INIT_HALF_WIDTH: f32 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutParams {
    pub a: f64,
    pub b: f64,
    pub n_epochs: usize,
    pub negative_sample_rate: usize,
    pub initial_lr: f64,
    pub gradient_clip: f64,
    pub seed: u64,
    /// Hogwild-style edge processing across threads. Not reproducible.
    pub parallel: bool,
}

/// Uniform random coordinates in `[-10, 10]^2`.
pub fn random_init(n: usize, seed: u64) -> Vec<[f32; 2]> {
    let mut rng = rng::stream(seed, 0);
    (0..n)
        .map(|_| {
            [
                rng.random_range(-INIT_HALF_WIDTH..=INIT_HALF_WIDTH),
                rng.random_range(-INIT_HALF_WIDTH..=INIT_HALF_WIDTH),
            ]
        })
        .collect()
}

/// Number of epochs between two samples of each edge:
/// `ceil(max_weight / weight)`.
pub fn epoch_periods(fg: &FuzzyGraph) -> Vec<usize> {
    let max_w = fg.max_weight();
    fg.edges
        .iter()
        .map(|e| ((max_w / e.weight).ceil() as usize).max(1))
        .collect()
}

#[inline]
fn clip(v: f64, bound: f64) -> f64 {
    v.clamp(-bound, bound)
}

/// Gradient coefficient pulling a pair at squared distance `d2` together.
#[inline]
fn attract_coeff(d2: f64, a: f64, b: f64) -> f64 {
    if d2 > 0.0 {
        -2.0 * a * b * d2.powf(b - 1.0) / (a * d2.powf(b) + 1.0)
    } else {
        0.0
    }
}

/// Gradient coefficient pushing a pair apart.
#[inline]
fn repulse_coeff(d2: f64, a: f64, b: f64) -> f64 {
    2.0 * b / ((0.001 + d2) * (a * d2.powf(b) + 1.0))
}

trait Coords {
    fn get(&self, i: usize) -> [f64; 2];
    fn set(&self, i: usize, v: [f64; 2]);
}

struct AtomicCoords(Vec<[AtomicU32; 2]>);

impl Coords for AtomicCoords {
    #[inline]
    fn get(&self, i: usize) -> [f64; 2] {
        let c = &self.0[i];
        [
            f32::from_bits(c[0].load(Ordering::Relaxed)) as f64,
            f32::from_bits(c[1].load(Ordering::Relaxed)) as f64,
        ]
    }

    #[inline]
    fn set(&self, i: usize, v: [f64; 2]) {
        let c = &self.0[i];
        c[0].store((v[0] as f32).to_bits(), Ordering::Relaxed);
        c[1].store((v[1] as f32).to_bits(), Ordering::Relaxed);
    }
}

struct CellCoords(Vec<std::cell::Cell<[f32; 2]>>);

impl Coords for CellCoords {
    #[inline]
    fn get(&self, i: usize) -> [f64; 2] {
        let c = self.0[i].get();
        [c[0] as f64, c[1] as f64]
    }

    #[inline]
    fn set(&self, i: usize, v: [f64; 2]) {
        self.0[i].set([v[0] as f32, v[1] as f32]);
    }
}

/// One sample of a directed edge `head -> tail`: attract both ends, then
/// push `head` away from `negatives` random other points.
#[inline]
fn sample_edge<C: Coords>(
    coords: &C,
    n: usize,
    head: usize,
    tail: usize,
    alpha: f64,
    p: &LayoutParams,
    rng: &mut rng::Rng,
) {
    let (a, b, bound) = (p.a, p.b, p.gradient_clip);
    let mut h = coords.get(head);
    let mut t = coords.get(tail);
    let diff = [h[0] - t[0], h[1] - t[1]];
    let d2 = diff[0] * diff[0] + diff[1] * diff[1];
    let coeff = attract_coeff(d2, a, b);
    for dim in 0..2 {
        let g = clip(coeff * diff[dim], bound);
        h[dim] += g * alpha;
        t[dim] -= g * alpha;
    }
    coords.set(tail, t);

    for _ in 0..p.negative_sample_rate {
        let mut other = rng.random_range(0..n - 1);
        if other >= head {
            other += 1;
        }
        let o = coords.get(other);
        let diff = [h[0] - o[0], h[1] - o[1]];
        let d2 = diff[0] * diff[0] + diff[1] * diff[1];
        if d2 > 0.0 {
            let coeff = repulse_coeff(d2, a, b);
            for dim in 0..2 {
                h[dim] += clip(coeff * diff[dim], bound) * alpha;
            }
        } else {
            for v in h.iter_mut() {
                *v += bound * alpha;
            }
        }
    }
    coords.set(head, h);
}

/// Optimizes `init` in place order and returns the final coordinates.
pub fn optimize_layout(fg: &FuzzyGraph, init: Vec<[f32; 2]>, p: &LayoutParams) -> Vec<[f32; 2]> {
    let n = fg.n;
    assert_eq!(init.len(), n, "initialization has the wrong number of points");
    if p.n_epochs == 0 {
        return init;
    }
    if fg.edges.is_empty() || n < 2 {
        if n > 0 {
            log::warn!("fuzzy graph has no edges; returning the initialization");
        }
        return init;
    }
    let periods = epoch_periods(fg);

    if p.parallel {
        let coords = AtomicCoords(
            init.iter()
                .map(|c| [AtomicU32::new(c[0].to_bits()), AtomicU32::new(c[1].to_bits())])
                .collect(),
        );
        const CHUNK: usize = 4096;
        for epoch in 0..p.n_epochs {
            let alpha = p.initial_lr * (1.0 - epoch as f64 / p.n_epochs as f64);
            fg.edges
                .par_chunks(CHUNK)
                .zip(periods.par_chunks(CHUNK))
                .enumerate()
                .for_each(|(chunk, (edges, periods))| {
                    let mut rng = rng::stream(p.seed, rng::mix(epoch as u64 + 1, chunk as u64));
                    for (e, &period) in edges.iter().zip(periods) {
                        if (epoch + 1) % period == 0 {
                            let (i, j) = (e.i as usize, e.j as usize);
                            sample_edge(&coords, n, i, j, alpha, p, &mut rng);
                            sample_edge(&coords, n, j, i, alpha, p, &mut rng);
                        }
                    }
                });
        }
        return coords.0.iter().map(|c| [f32::from_bits(c[0].load(Ordering::Relaxed)), f32::from_bits(c[1].load(Ordering::Relaxed))]).collect();
    }

    let coords = CellCoords(init.into_iter().map(std::cell::Cell::new).collect());
    let mut rng = rng::stream(p.seed, 1);
    for epoch in 0..p.n_epochs {
        let alpha = p.initial_lr * (1.0 - epoch as f64 / p.n_epochs as f64);
        for (e, &period) in fg.edges.iter().zip(&periods) {
            if (epoch + 1) % period == 0 {
                let (i, j) = (e.i as usize, e.j as usize);
                sample_edge(&coords, n, i, j, alpha, p, &mut rng);
                sample_edge(&coords, n, j, i, alpha, p, &mut rng);
            }
        }
    }
    coords.0.into_iter().map(|c| c.into_inner()).collect()
}
