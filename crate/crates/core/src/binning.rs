//! Conformal binning: partition the covariate axis, forecast the weighted
//! empirical distribution of each bin's outcomes, and widen by the one
//! augmented observation to get a conformal band.
//!
//! Forecasts that depend on the covariate only through the bin are
//! auto-calibrated by construction; the conformal counting band has exact
//! thickness `1 / (|bin| + 1)`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::band::{PredictiveBand, StepFn};
use crate::error::{Error, Result};
use crate::isotonic::pava_increasing_blocks;
use crate::sample::WeightedSample;
use crate::step_cdf::StepCdf;

/// A fitted covariate partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BinModel {
    /// Nearest-center assignment; centers are sorted and distinct.
    Kmeans { centers: Vec<f64> },
    /// Interval assignment; `boundaries` are the sorted cut points between
    /// adjacent bins (one fewer than the number of bins).
    Isomean { boundaries: Vec<f64> },
}

impl BinModel {
    pub fn bins(&self) -> usize {
        match self {
            BinModel::Kmeans { centers } => centers.len(),
            BinModel::Isomean { boundaries } => boundaries.len() + 1,
        }
    }
}

/// Lloyd iterations from one seeded k-means++-style start.
/// Returns (centers sorted, within-cluster SSE).
fn lloyd_once(xs: &[f64], k: usize, rng: &mut ChaCha12Rng) -> (Vec<f64>, f64) {
    let n = xs.len();
    let mut centers = Vec::with_capacity(k);
    centers.push(xs[rng.random_range(0..n)]);
    let mut d2: Vec<f64> = xs.iter().map(|&x| (x - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            // Sample proportional to squared distance from the chosen set.
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                u -= d;
                if u <= 0.0 {
                    pick = i;
                    break;
                }
            }
            xs[pick]
        } else {
            // All points coincide with some center; any point works.
            xs[rng.random_range(0..n)]
        };
        centers.push(next);
        for (i, &x) in xs.iter().enumerate() {
            d2[i] = d2[i].min((x - next).powi(2));
        }
    }
    centers.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    centers.dedup();
    // Degenerate start (duplicate centers): re-seed deterministically with
    // the most distant points until k distinct centers exist.
    while centers.len() < k {
        let far = xs
            .iter()
            .copied()
            .max_by(|&a, &b| {
                let da = centers.iter().map(|&c| (a - c).abs()).fold(f64::INFINITY, f64::min);
                let db = centers.iter().map(|&c| (b - c).abs()).fold(f64::INFINITY, f64::min);
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        let pos = centers.partition_point(|&c| c < far);
        if centers.get(pos) == Some(&far) {
            break; // fewer than k distinct values; caller prevents this
        }
        centers.insert(pos, far);
    }

    let mut assignment = vec![0usize; n];
    loop {
        let mut changed = false;
        for (i, &x) in xs.iter().enumerate() {
            let a = nearest_center(&centers, x);
            if a != assignment[i] {
                assignment[i] = a;
                changed = true;
            }
        }
        let mut sums = vec![0.0; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (i, &x) in xs.iter().enumerate() {
            sums[assignment[i]] += x;
            counts[assignment[i]] += 1;
        }
        for (j, c) in centers.iter_mut().enumerate() {
            if counts[j] > 0 {
                *c = sums[j] / counts[j] as f64;
            }
        }
        centers.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        if !changed {
            break;
        }
    }
    let sse: f64 = xs
        .iter()
        .map(|&x| {
            let c = centers[nearest_center(&centers, x)];
            (x - c).powi(2)
        })
        .sum();
    (centers, sse)
}

fn nearest_center(centers: &[f64], x: f64) -> usize {
    // Centers are sorted; compare the two neighbors of the insertion point.
    // Ties break to the smaller center.
    let idx = centers.partition_point(|&c| c < x);
    if idx == 0 {
        return 0;
    }
    if idx == centers.len() {
        return centers.len() - 1;
    }
    let (left, right) = (centers[idx - 1], centers[idx]);
    if (x - left) <= (right - x) {
        idx - 1
    } else {
        idx
    }
}

/// One-dimensional k-means: Lloyd iterations to convergence from `restarts`
/// seeded k-means++-style starts, keeping the lowest within-cluster sum of
/// squares. Deterministic given `seed`.
pub fn kmeans_1d(xs: &[f64], k: usize, restarts: usize, seed: u64) -> Result<BinModel> {
    if xs.is_empty() {
        return Err(Error::EmptySample);
    }
    for (i, &x) in xs.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFinite { what: "covariate", index: i });
        }
    }
    let mut distinct = xs.to_vec();
    distinct.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if k == 0 || k > distinct.len() {
        return Err(Error::BadK { k, max: distinct.len() });
    }
    let restarts = restarts.max(1);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..restarts {
        let (centers, sse) = lloyd_once(xs, k, &mut rng);
        let better = match &best {
            None => true,
            Some((bc, bs)) => {
                // Tie-break toward the lexicographically smaller center list.
                sse < *bs - 1e-12
                    || ((sse - *bs).abs() <= 1e-12
                        && centers
                            .iter()
                            .zip(bc)
                            .any(|(a, b)| a != b)
                        && centers < *bc)
            }
        };
        if better {
            best = Some((centers, sse));
        }
    }
    let (centers, _) = best.unwrap();
    Ok(BinModel::Kmeans { centers })
}

/// Bins as the maximal level sets of a weighted increasing isotonic fit of
/// the outcomes on the covariates. Boundaries fall halfway between the
/// extreme covariates of adjacent level sets.
pub fn isomean_bins(sample: &WeightedSample) -> Result<BinModel> {
    // Pool covariate ties, preserving covariate order.
    let pts = sample.points();
    let mut order: Vec<usize> = (0..pts.len()).collect();
    order.sort_unstable_by(|&a, &b| pts[a].x.partial_cmp(&pts[b].x).unwrap());
    let mut xs: Vec<f64> = Vec::new();
    let mut ws: Vec<f64> = Vec::new();
    let mut means: Vec<f64> = Vec::new();
    for &i in &order {
        let p = pts[i];
        if xs.last() == Some(&p.x) {
            let w = ws.last_mut().unwrap();
            let m = means.last_mut().unwrap();
            *m = (*m * *w + p.y * p.weight) / (*w + p.weight);
            *w += p.weight;
        } else {
            xs.push(p.x);
            ws.push(p.weight);
            means.push(p.y);
        }
    }
    let blocks = pava_increasing_blocks(&means, &ws)?;
    let mut boundaries = Vec::with_capacity(blocks.len().saturating_sub(1));
    for pair in blocks.windows(2) {
        let left_max = xs[pair[0].1 - 1];
        let right_min = xs[pair[1].0];
        boundaries.push((left_max + right_min) / 2.0);
    }
    Ok(BinModel::Isomean { boundaries })
}

/// Bin index for a covariate. Nearest center (ties toward the lower index)
/// for k-means models, interval lookup for isotonic-mean models.
pub fn assign_bin(model: &BinModel, x: f64) -> Result<usize> {
    if !x.is_finite() {
        return Err(Error::NonFinite { what: "covariate", index: 0 });
    }
    Ok(match model {
        BinModel::Kmeans { centers } => nearest_center(centers, x),
        BinModel::Isomean { boundaries } => boundaries.partition_point(|&b| b <= x),
    })
}

/// Conformal counting band from one bin's outcomes: with `b` outcomes,
/// `lower(y) = #{y_j <= y} / (b + 1)` and `upper(y) = (#{y_j <= y} + 1) / (b + 1)`.
pub fn cb_band(bin_outcomes: &[f64]) -> Result<PredictiveBand> {
    if bin_outcomes.is_empty() {
        return Err(Error::EmptySample);
    }
    for (i, &y) in bin_outcomes.iter().enumerate() {
        if !y.is_finite() {
            return Err(Error::NonFinite { what: "outcome", index: i });
        }
    }
    let mut ys = bin_outcomes.to_vec();
    ys.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let b = ys.len() as f64;

    let mut jumps: Vec<f64> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for (i, &y) in ys.iter().enumerate() {
        if jumps.last() == Some(&y) {
            *counts.last_mut().unwrap() = i + 1;
        } else {
            jumps.push(y);
            counts.push(i + 1);
        }
    }
    let lower_levels: Vec<f64> = counts.iter().map(|&c| c as f64 / (b + 1.0)).collect();
    let upper_levels: Vec<f64> = counts.iter().map(|&c| (c as f64 + 1.0) / (b + 1.0)).collect();
    let lower = StepFn::new(0.0, jumps.clone(), lower_levels)?;
    let upper = StepFn::new(1.0 / (b + 1.0), jumps, upper_levels)?;
    PredictiveBand::from_bounds(lower, upper)
}

/// Crisp forecast for a bin: the unweighted empirical CDF of its outcomes.
pub fn cb_crisp(bin_outcomes: &[f64]) -> Result<StepCdf> {
    let w = vec![1.0; bin_outcomes.len()];
    StepCdf::empirical(bin_outcomes, &w)
}
