//! Weighted isotonic regression (pool-adjacent-violators) and isotonic
//! distributional regression (IDR).
//!
//! An IDR fit solves, separately for every outcome threshold `t`, the
//! weighted least-squares projection of the indicator vector `1{y_i <= t}`
//! onto the cone of vectors *nonincreasing* in the covariate: larger
//! covariates shift the conditional distribution upwards, so their CDF values
//! at a fixed threshold can only shrink. Covariate ties are pooled before
//! projecting.

use crate::error::{Error, Result};
use crate::sample::WeightedSample;
use crate::step_cdf::StepCdf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Increasing,
    Decreasing,
}

/// Reusable block stack for the hot PAVA loop.
#[derive(Debug, Default)]
pub(crate) struct PavaScratch {
    mean: Vec<f64>,
    weight: Vec<f64>,
    end: Vec<usize>,
}

impl PavaScratch {
    /// Run decreasing-direction PAVA over `(values, weights)` and leave the
    /// merged blocks in the scratch arrays. Caller guarantees equal lengths
    /// and positive weights.
    fn run_decreasing(&mut self, values: &[f64], weights: &[f64]) {
        self.mean.clear();
        self.weight.clear();
        self.end.clear();
        for i in 0..values.len() {
            let mut m = values[i];
            let mut w = weights[i];
            // Merge while the new block rises above its predecessor
            // (violating "nonincreasing").
            while let Some(&prev) = self.mean.last() {
                if prev < m {
                    let pw = self.weight.pop().unwrap();
                    self.mean.pop();
                    self.end.pop();
                    m = (pw * prev + w * m) / (pw + w);
                    w += pw;
                } else {
                    break;
                }
            }
            self.mean.push(m);
            self.weight.push(w);
            self.end.push(i + 1);
        }
    }

    /// Fitted value at `index` after [`run_decreasing`](Self::run_decreasing).
    fn value_at(&self, index: usize) -> f64 {
        let block = self.end.partition_point(|&e| e <= index);
        self.mean[block]
    }

    fn expand_into(&self, out: &mut Vec<f64>) {
        out.clear();
        let mut start = 0;
        for (b, &e) in self.end.iter().enumerate() {
            for _ in start..e {
                out.push(self.mean[b]);
            }
            start = e;
        }
    }
}

fn check_pava_inputs(values: &[f64], weights: &[f64]) -> Result<()> {
    if values.len() != weights.len() {
        return Err(Error::LengthMismatch(format!(
            "{} values vs {} weights",
            values.len(),
            weights.len()
        )));
    }
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { what: "value", index: i });
        }
        if !(weights[i].is_finite() && weights[i] > 0.0) {
            return Err(Error::BadWeight { index: i });
        }
    }
    Ok(())
}

/// Weighted least-squares isotonic fit of `values` in the given direction.
///
/// Returns the projection onto the monotone cone; level sets carry the
/// weighted mean of their members. The fit is idempotent and preserves the
/// weighted mean.
pub fn pava(values: &[f64], weights: &[f64], direction: Direction) -> Result<Vec<f64>> {
    check_pava_inputs(values, weights)?;
    let mut scratch = PavaScratch::default();
    let mut out = Vec::with_capacity(values.len());
    match direction {
        Direction::Decreasing => {
            scratch.run_decreasing(values, weights);
            scratch.expand_into(&mut out);
        }
        Direction::Increasing => {
            // Increasing fit == decreasing fit of the reversed sequence.
            let rv: Vec<f64> = values.iter().rev().copied().collect();
            let rw: Vec<f64> = weights.iter().rev().copied().collect();
            scratch.run_decreasing(&rv, &rw);
            scratch.expand_into(&mut out);
            out.reverse();
        }
    }
    Ok(out)
}

/// `(start, end)` index ranges of the maximal level sets of an increasing
/// PAVA fit, in covariate order. Used by isotonic-mean binning.
pub(crate) fn pava_increasing_blocks(values: &[f64], weights: &[f64]) -> Result<Vec<(usize, usize)>> {
    check_pava_inputs(values, weights)?;
    let rv: Vec<f64> = values.iter().rev().copied().collect();
    let rw: Vec<f64> = weights.iter().rev().copied().collect();
    let mut scratch = PavaScratch::default();
    scratch.run_decreasing(&rv, &rw);
    let n = values.len();
    // The pooling loop only merges strict violations, so neighboring blocks
    // can share a fitted value (e.g. a constant input); a level set is the
    // maximal run of equal values.
    let mut blocks: Vec<(usize, usize)> = Vec::with_capacity(scratch.end.len());
    let mut prev_mean = f64::NAN;
    let mut start = 0;
    for (b, &e) in scratch.end.iter().enumerate() {
        let range = (n - e, n - start);
        let mean = scratch.mean[b];
        match blocks.last_mut() {
            Some(last) if mean == prev_mean => last.0 = range.0,
            _ => blocks.push(range),
        }
        prev_mean = mean;
        start = e;
    }
    blocks.reverse();
    Ok(blocks)
}

/// Training sample grouped by distinct covariate, each group's outcomes
/// sorted. The shared substrate for IDR fits and their conformal bands.
#[derive(Debug, Clone)]
pub(crate) struct Groups {
    /// Sorted distinct covariates.
    pub xs: Vec<f64>,
    /// Pooled weight per group.
    pub ws: Vec<f64>,
    /// All observations sorted by outcome: `(y, group index, weight)`.
    pub events: Vec<(f64, usize, f64)>,
    /// Sorted distinct outcomes.
    pub thresholds: Vec<f64>,
}

impl Groups {
    pub fn build(sample: &WeightedSample) -> Self {
        let pts = sample.points();
        let mut order: Vec<usize> = (0..pts.len()).collect();
        order.sort_unstable_by(|&a, &b| pts[a].x.partial_cmp(&pts[b].x).unwrap());

        let mut xs: Vec<f64> = Vec::new();
        let mut ws: Vec<f64> = Vec::new();
        let mut group_of = vec![0usize; pts.len()];
        for &i in &order {
            if xs.last() == Some(&pts[i].x) {
                *ws.last_mut().unwrap() += pts[i].weight;
            } else {
                xs.push(pts[i].x);
                ws.push(pts[i].weight);
            }
            group_of[i] = xs.len() - 1;
        }

        let mut events: Vec<(f64, usize, f64)> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| (p.y, group_of[i], p.weight))
            .collect();
        events.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

        let mut thresholds: Vec<f64> = events.iter().map(|e| e.0).collect();
        thresholds.dedup();

        Groups { xs, ws, events, thresholds }
    }

    /// Sweep the thresholds in ascending order, maintaining per-group
    /// weighted indicator means and handing each threshold's decreasing PAVA
    /// block stack to `visit(threshold index, scratch)`.
    pub fn sweep<F: FnMut(usize, &PavaScratch)>(&self, scratch: &mut SweepScratch, mut visit: F) {
        let m = self.xs.len();
        scratch.cumw.clear();
        scratch.cumw.resize(m, 0.0);
        scratch.means.clear();
        scratch.means.resize(m, 0.0);
        let mut next_event = 0;
        for (ti, &t) in self.thresholds.iter().enumerate() {
            while next_event < self.events.len() && self.events[next_event].0 <= t {
                let (_, g, w) = self.events[next_event];
                scratch.cumw[g] += w;
                scratch.means[g] = scratch.cumw[g] / self.ws[g];
                next_event += 1;
            }
            scratch.pava.run_decreasing(&scratch.means, &self.ws);
            visit(ti, &scratch.pava);
        }
    }
}

/// Work buffers for [`Groups::sweep`]; reuse across calls to avoid
/// reallocating inside the conformal loops.
#[derive(Debug, Default)]
pub(crate) struct SweepScratch {
    cumw: Vec<f64>,
    means: Vec<f64>,
    pava: PavaScratch,
}

/// A fitted IDR model: for each distinct covariate (group) and each distinct
/// outcome (threshold), the isotonically projected conditional CDF value.
#[derive(Debug, Clone)]
pub struct IdrFit {
    covariates: Vec<f64>,
    weights: Vec<f64>,
    thresholds: Vec<f64>,
    /// Row-major `[group][threshold]`.
    matrix: Vec<f64>,
}

impl IdrFit {
    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn group_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// CDF value for group `g` at threshold index `t`.
    pub fn value(&self, g: usize, t: usize) -> f64 {
        self.matrix[g * self.thresholds.len() + t]
    }

    /// Full CDF row for group `g`.
    pub fn row(&self, g: usize) -> &[f64] {
        let t = self.thresholds.len();
        &self.matrix[g * t..(g + 1) * t]
    }

    pub fn group_index(&self, x: f64) -> Result<usize> {
        let idx = self.covariates.partition_point(|&c| c < x);
        if idx < self.covariates.len() && self.covariates[idx] == x {
            Ok(idx)
        } else {
            Err(Error::UnknownGroup { x })
        }
    }
}

/// Fit IDR to a weighted sample.
pub fn idr_fit(sample: &WeightedSample) -> Result<IdrFit> {
    let groups = Groups::build(sample);
    let m = groups.xs.len();
    let nt = groups.thresholds.len();
    let mut matrix = vec![0.0; m * nt];
    let mut scratch = SweepScratch::default();
    groups.sweep(&mut scratch, |ti, pava| {
        let mut start = 0;
        for (b, &e) in pava.end.iter().enumerate() {
            for g in start..e {
                matrix[g * nt + ti] = pava.mean[b];
            }
            start = e;
        }
    });
    Ok(IdrFit {
        covariates: groups.xs,
        weights: groups.ws,
        thresholds: groups.thresholds,
        matrix,
    })
}

/// Extract the predictive CDF of a fitted group as a step CDF.
///
/// `x` must be exactly one of the fit's covariate groups.
pub fn idr_cdf_at(fit: &IdrFit, x: f64) -> Result<StepCdf> {
    let g = fit.group_index(x)?;
    let pairs: Vec<(f64, f64)> = fit
        .thresholds
        .iter()
        .zip(fit.row(g))
        .map(|(&t, &v)| (t, v))
        .collect();
    StepCdf::from_levels(&pairs)
}

/// Fitted CDF value of one group across all thresholds, computed by the
/// sweep without materializing the full matrix. Used by the conformal
/// two-run construction where only the test covariate's row is needed.
pub(crate) fn idr_row_for_group(
    groups: &Groups,
    target: usize,
    scratch: &mut SweepScratch,
    out: &mut Vec<f64>,
) {
    out.clear();
    out.reserve(groups.thresholds.len());
    groups.sweep(scratch, |_, pava| out.push(pava.value_at(target)));
}
