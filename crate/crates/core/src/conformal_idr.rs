//! Conformal predictive bands from isotonic distributional regression.
//!
//! The band at a test covariate is the envelope of the IDR predictive CDFs
//! obtained by augmenting the training sample with `(x_new, y')` and letting
//! the hypothesized outcome `y'` range over the reals. Because an IDR fit is
//! monotone in the outcomes — raising any `y_i` can only lower fitted CDF
//! values — the envelope is attained at the two extremes, so two augmented
//! fits suffice:
//!
//! - upper bound: augment with the pseudo-outcome `min y - C`;
//! - lower bound: augment with `max y + C`.
//!
//! `C > 0` fixes the reporting support `[min y - C, max y + C]`; outside it
//! the band is clamped to 0 and 1 (the augmented atoms sit at its endpoints,
//! so no band structure is lost).

use crate::band::{CrispKind, Prediction, PredictiveBand, StepFn};
use crate::error::{Error, Result};
use crate::isotonic::{idr_cdf_at, idr_fit, idr_row_for_group, Groups, SweepScratch};
use crate::sample::{SamplePoint, WeightedSample};
use crate::step_cdf::Side;

/// A training sample prepared for repeated conformal-IDR band queries.
pub struct CidrModel {
    groups: Groups,
    min_y: f64,
    max_y: f64,
}

/// Reusable buffers for [`CidrModel::band_with_scratch`].
#[derive(Default)]
pub struct CidrScratch {
    aug: Option<Groups>,
    sweep: SweepScratch,
    row: Vec<f64>,
}

impl CidrModel {
    pub fn new(train: &WeightedSample) -> Self {
        CidrModel {
            groups: Groups::build(train),
            min_y: train.min_outcome(),
            max_y: train.max_outcome(),
        }
    }

    /// Reporting support `[min y - C, max y + C]`.
    pub fn support(&self, c: f64) -> (f64, f64) {
        (self.min_y - c, self.max_y + c)
    }

    pub fn band(&self, x_new: f64, c: f64) -> Result<PredictiveBand> {
        self.band_with_scratch(x_new, c, &mut CidrScratch::default())
    }

    /// One conformal band; `scratch` carries buffers across calls so the
    /// per-test-point cost is the two isotonic sweeps and nothing else.
    pub fn band_with_scratch(
        &self,
        x_new: f64,
        c: f64,
        scratch: &mut CidrScratch,
    ) -> Result<PredictiveBand> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "widening constant C must be positive and finite, got {c}"
            )));
        }
        if !x_new.is_finite() {
            return Err(Error::NonFinite { what: "covariate", index: 0 });
        }
        let (lo, hi) = self.support(c);
        let upper = self.one_run(x_new, lo, scratch);
        let lower = self.one_run(x_new, hi, scratch);
        PredictiveBand::from_bounds(lower, upper)
    }

    /// Fit IDR on the sample augmented with `(x_new, pseudo_y)` and return
    /// the fitted CDF row at `x_new` as a step function.
    fn one_run(&self, x_new: f64, pseudo_y: f64, scratch: &mut CidrScratch) -> StepFn {
        let mut aug = scratch.aug.take().unwrap_or_else(|| Groups {
            xs: Vec::new(),
            ws: Vec::new(),
            events: Vec::new(),
            thresholds: Vec::new(),
        });
        let target = self.fill_augmented(x_new, pseudo_y, &mut aug);
        idr_row_for_group(&aug, target, &mut scratch.sweep, &mut scratch.row);

        let mut jumps = Vec::new();
        let mut levels: Vec<f64> = Vec::new();
        for (&t, &v) in aug.thresholds.iter().zip(scratch.row.iter()) {
            let prev = levels.last().copied().unwrap_or(0.0);
            if v > prev {
                jumps.push(t);
                levels.push(v);
            }
        }
        if let Some(last) = levels.last_mut() {
            // The final threshold carries indicator 1 in every group; snap
            // accumulated rounding so the bound terminates at exactly 1.
            if (*last - 1.0).abs() < 1e-9 {
                *last = 1.0;
            }
        }
        scratch.aug = Some(aug);
        StepFn::new(0.0, jumps, levels).expect("isotonic row is a valid step function")
    }

    /// Splice `(x_new, pseudo_y)` into the prebuilt group arrays. Returns the
    /// index of the test covariate's group in the augmented arrays.
    fn fill_augmented(&self, x_new: f64, pseudo_y: f64, aug: &mut Groups) -> usize {
        let g = &self.groups;
        let idx = g.xs.partition_point(|&x| x < x_new);
        let exact = idx < g.xs.len() && g.xs[idx] == x_new;

        aug.xs.clear();
        aug.ws.clear();
        aug.xs.extend_from_slice(&g.xs);
        aug.ws.extend_from_slice(&g.ws);
        if exact {
            aug.ws[idx] += 1.0;
        } else {
            aug.xs.insert(idx, x_new);
            aug.ws.insert(idx, 1.0);
        }

        let shift = |grp: usize| if !exact && grp >= idx { grp + 1 } else { grp };
        aug.events.clear();
        aug.thresholds.clear();
        let pseudo_first = pseudo_y < g.events.first().map_or(f64::INFINITY, |e| e.0);
        if pseudo_first {
            aug.events.push((pseudo_y, idx, 1.0));
            aug.thresholds.push(pseudo_y);
        }
        aug.events
            .extend(g.events.iter().map(|&(y, grp, w)| (y, shift(grp), w)));
        aug.thresholds.extend_from_slice(&g.thresholds);
        if !pseudo_first {
            aug.events.push((pseudo_y, idx, 1.0));
            aug.thresholds.push(pseudo_y);
        }
        idx
    }
}

/// Conformal-IDR band via the two augmented fits.
pub fn cidr_band(train: &WeightedSample, x_new: f64, c: f64) -> Result<PredictiveBand> {
    CidrModel::new(train).band(x_new, c)
}

/// Test oracle: the band as an explicit envelope over a grid of hypothesized
/// outcomes. One full IDR fit per grid value; quadratic in the sample size,
/// so only suitable for small inputs.
///
/// `y_grid` must span the intended reporting support (its extremes play the
/// role of `min y - C` and `max y + C`) and should include the training
/// outcomes.
pub fn cidr_band_bruteforce(
    train: &WeightedSample,
    x_new: f64,
    y_grid: &[f64],
) -> Result<PredictiveBand> {
    if y_grid.is_empty() {
        return Err(Error::InvalidParameter("empty hypothesized-outcome grid".into()));
    }
    for (i, &y) in y_grid.iter().enumerate() {
        if !y.is_finite() {
            return Err(Error::NonFinite { what: "grid value", index: i });
        }
    }

    let mut eval_pts: Vec<f64> = train
        .points()
        .iter()
        .map(|p| p.y)
        .chain(y_grid.iter().copied())
        .collect();
    eval_pts.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    eval_pts.dedup();

    let mut lower_levels = vec![f64::INFINITY; eval_pts.len()];
    let mut upper_levels = vec![f64::NEG_INFINITY; eval_pts.len()];
    for &y_hyp in y_grid {
        let mut pts = train.points().to_vec();
        pts.push(SamplePoint { x: x_new, y: y_hyp, weight: 1.0 });
        let fit = idr_fit(&WeightedSample::new(pts)?)?;
        let cdf = idr_cdf_at(&fit, x_new)?;
        for (i, &e) in eval_pts.iter().enumerate() {
            let v = cdf.eval(e, Side::Right);
            lower_levels[i] = lower_levels[i].min(v);
            upper_levels[i] = upper_levels[i].max(v);
        }
    }

    let levelize = |vals: &[f64]| {
        let mut jumps = Vec::new();
        let mut levels: Vec<f64> = Vec::new();
        for (&e, &v) in eval_pts.iter().zip(vals) {
            let prev = levels.last().copied().unwrap_or(0.0);
            if v > prev {
                jumps.push(e);
                levels.push(v);
            }
        }
        StepFn::new(0.0, jumps, levels)
    };
    PredictiveBand::from_bounds(levelize(&lower_levels)?, levelize(&upper_levels)?)
}

/// Band plus crisp CDF, thickness, and epistemic class for one test point.
pub fn cidr_predict(
    train: &WeightedSample,
    x_new: f64,
    c: f64,
    crisp: CrispKind,
) -> Result<Prediction> {
    let model = CidrModel::new(train);
    let band = model.band(x_new, c)?;
    let (lo, hi) = model.support(c);
    Prediction::from_band(band, lo, hi, crisp)
}
