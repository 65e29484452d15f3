//! Scoring and calibration diagnostics.
//!
//! The CRPS is evaluated in closed form for step CDFs (the integrand is
//! piecewise constant between jump locations). Calibration diagnostics
//! cover randomized PIT values with p-p curve consistency bands, CORP
//! (isotonic-recalibration) reliability curves for threshold events, and the
//! in-sample checks that the binning, IDR, and residual procedures satisfy
//! their respective calibration guarantees exactly.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::band::{epistemic_class, EpistemicClass};
use crate::binning::{assign_bin, BinModel};
use crate::error::{Error, Result};
use crate::isotonic::{pava, Direction, IdrFit};
use crate::sample::WeightedSample;
use crate::step_cdf::{Side, StepCdf};

/// Exact CRPS of a step CDF at outcome `y`:
/// the integral of `(1{y <= z} - F(z))^2` over the real line, accumulated
/// piecewise between the jump locations of `F` augmented with `y`.
pub fn crps(cdf: &StepCdf, y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::NonFinite { what: "outcome", index: 0 });
    }
    let jumps = cdf.jumps();
    let cum = cdf.cum();
    let pos = jumps.partition_point(|&z| z < y);
    let mut pts = Vec::with_capacity(jumps.len() + 1);
    pts.extend_from_slice(&jumps[..pos]);
    if jumps.get(pos) != Some(&y) {
        pts.push(y);
    }
    pts.extend_from_slice(&jumps[pos..]);

    let mut total = 0.0;
    let mut level = 0.0;
    let mut j = 0;
    for w in pts.windows(2) {
        let (p, q) = (w[0], w[1]);
        while j < jumps.len() && jumps[j] <= p {
            level = cum[j];
            j += 1;
        }
        let ind = if p >= y { 1.0 } else { 0.0 };
        total += (q - p) * (ind - level) * (ind - level);
    }
    Ok(total)
}

/// Randomized probability integral transform `F(y-) + v (F(y) - F(y-))`.
/// The uniform draw `v` is supplied by the caller so that experiment reruns
/// are reproducible.
pub fn pit(cdf: &StepCdf, y: f64, v: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::NonFinite { what: "outcome", index: 0 });
    }
    if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
        return Err(Error::BadUniform { v });
    }
    let left = cdf.eval(y, Side::Left);
    let right = cdf.eval(y, Side::Right);
    Ok(left + v * (right - left))
}

/// One evaluation point of a PIT p-p curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpPoint {
    pub alpha: f64,
    pub ecdf: f64,
    pub band_lo: f64,
    pub band_hi: f64,
}

/// Consistency-band flavor for p-p curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyBand {
    /// Pointwise binomial quantile interval around the diagonal.
    PointwiseBinomial,
    /// Simultaneous Kolmogorov-Smirnov band.
    SimultaneousKs,
}

/// Smallest `k` in `0..=n` with `P(X <= k) >= q`. Bisection over the exact
/// CDF; the statrs default quantile cannot answer lower-tail queries whose
/// target sits below `P(X = 0)`.
fn binomial_quantile(binom: &Binomial, n: u64, q: f64) -> u64 {
    let (mut lo, mut hi) = (0u64, n);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if binom.cdf(mid) >= q {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    lo
}

/// Empirical CDF of PIT values on a grid of levels, with a consistency band
/// describing the sampling variation of a perfectly calibrated forecaster.
pub fn pp_curve(
    pits: &[f64],
    grid: &[f64],
    band_level: f64,
    band: ConsistencyBand,
) -> Result<Vec<PpPoint>> {
    if pits.is_empty() {
        return Err(Error::EmptySample);
    }
    for &p in pits {
        if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
            return Err(Error::BadUniform { v: p });
        }
    }
    if !(band_level > 0.0 && band_level < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "band level {band_level} outside (0, 1)"
        )));
    }
    if grid.iter().any(|a| !(a.is_finite() && *a > 0.0 && *a < 1.0)) {
        return Err(Error::InvalidParameter("p-p grid levels must lie in (0, 1)".into()));
    }

    let mut sorted = pits.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let m = sorted.len();
    let mf = m as f64;
    let tail = (1.0 - band_level) / 2.0;
    let ks_half = ((-(tail.ln())) / 2.0).sqrt() / mf.sqrt();

    let mut curve = Vec::with_capacity(grid.len());
    for &alpha in grid {
        let ecdf = sorted.partition_point(|&p| p <= alpha) as f64 / mf;
        let (band_lo, band_hi) = match band {
            ConsistencyBand::PointwiseBinomial => {
                let binom = Binomial::new(alpha, m as u64)
                    .map_err(|e| Error::InvalidParameter(e.to_string()))?;
                (
                    binomial_quantile(&binom, m as u64, tail) as f64 / mf,
                    binomial_quantile(&binom, m as u64, 1.0 - tail) as f64 / mf,
                )
            }
            ConsistencyBand::SimultaneousKs => {
                ((alpha - ks_half).max(0.0), (alpha + ks_half).min(1.0))
            }
        };
        curve.push(PpPoint { alpha, ecdf, band_lo, band_hi });
    }
    Ok(curve)
}

/// The standard 99-point p-p grid (1%, 2%, ..., 99%).
pub fn pp_grid() -> Vec<f64> {
    (1..100).map(|j| j as f64 / 100.0).collect()
}

/// One point of a CORP reliability curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityPoint {
    /// Issued forecast probability (tie-pooled, sorted ascending).
    pub forecast: f64,
    /// Isotonically recalibrated event frequency.
    pub recalibrated: f64,
}

/// CORP reliability curve: isotonic regression of binary events on forecast
/// probabilities, with exact ties pooled before the regression.
pub fn corp_reliability(forecast_probs: &[f64], events: &[bool]) -> Result<Vec<ReliabilityPoint>> {
    if forecast_probs.len() != events.len() {
        return Err(Error::LengthMismatch(format!(
            "{} forecast probabilities, {} events",
            forecast_probs.len(),
            events.len()
        )));
    }
    if forecast_probs.is_empty() {
        return Err(Error::EmptySample);
    }
    for &p in forecast_probs {
        if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidParameter(format!(
                "forecast probability {p} outside [0, 1]"
            )));
        }
    }

    let mut order: Vec<usize> = (0..forecast_probs.len()).collect();
    order.sort_unstable_by(|&a, &b| forecast_probs[a].partial_cmp(&forecast_probs[b]).unwrap());

    let mut probs: Vec<f64> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    let mut counts: Vec<f64> = Vec::new();
    for &i in &order {
        let p = forecast_probs[i];
        let e = if events[i] { 1.0 } else { 0.0 };
        if probs.last() == Some(&p) {
            *sums.last_mut().unwrap() += e;
            *counts.last_mut().unwrap() += 1.0;
        } else {
            probs.push(p);
            sums.push(e);
            counts.push(1.0);
        }
    }
    let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, c)| s / c).collect();
    let recalibrated = pava(&means, &counts, Direction::Increasing)?;
    Ok(probs
        .into_iter()
        .zip(recalibrated)
        .map(|(forecast, recalibrated)| ReliabilityPoint { forecast, recalibrated })
        .collect())
}

/// Largest absolute gap between a reliability curve and the diagonal.
pub fn reliability_deviation(curve: &[ReliabilityPoint]) -> f64 {
    curve
        .iter()
        .map(|p| (p.recalibrated - p.forecast).abs())
        .fold(0.0, f64::max)
}

/// Linear-interpolation percentile of a nonempty sample (levels in [0, 1]).
fn percentile(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = level * (n - 1) as f64;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// The five reliability-diagram threshold levels used throughout.
pub const THRESHOLD_LEVELS: [f64; 5] = [0.10, 0.25, 0.50, 0.75, 0.90];

/// Observation percentiles at [`THRESHOLD_LEVELS`].
pub fn reliability_thresholds(observations: &[f64]) -> Result<Vec<f64>> {
    if observations.is_empty() {
        return Err(Error::EmptySample);
    }
    for (i, &y) in observations.iter().enumerate() {
        if !y.is_finite() {
            return Err(Error::NonFinite { what: "observation", index: i });
        }
    }
    let mut sorted = observations.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(THRESHOLD_LEVELS.iter().map(|&l| percentile(&sorted, l)).collect())
}

/// Sup-distance between per-group forecast CDFs and the weighted empirical
/// CDF of the outcomes conditioned on the group. `assignments[i]` names the
/// forecast group of sample point `i`; groups without points are skipped.
pub fn autocal_discrepancy(
    forecasts: &[StepCdf],
    assignments: &[usize],
    sample: &WeightedSample,
) -> Result<f64> {
    let pts = sample.points();
    if assignments.len() != pts.len() {
        return Err(Error::LengthMismatch(format!(
            "{} assignments for {} sample points",
            assignments.len(),
            pts.len()
        )));
    }
    if let Some(&bad) = assignments.iter().find(|&&g| g >= forecasts.len()) {
        return Err(Error::InvalidParameter(format!(
            "assignment {bad} exceeds the {} forecast groups",
            forecasts.len()
        )));
    }

    let mut worst: f64 = 0.0;
    for (g, forecast) in forecasts.iter().enumerate() {
        let mut ys = Vec::new();
        let mut ws = Vec::new();
        for (p, &a) in pts.iter().zip(assignments) {
            if a == g {
                ys.push(p.y);
                ws.push(p.weight);
            }
        }
        if ys.is_empty() {
            continue;
        }
        let empirical = StepCdf::empirical(&ys, &ws)?;
        let mut probes: Vec<f64> =
            forecast.jumps().iter().chain(empirical.jumps()).copied().collect();
        probes.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        probes.dedup();
        for &z in &probes {
            for side in [Side::Left, Side::Right] {
                let d = (forecast.eval(z, side) - empirical.eval(z, side)).abs();
                worst = worst.max(d);
            }
        }
    }
    Ok(worst)
}

/// Auto-calibration of the binning procedure, checked in-sample: each bin's
/// forecast (the weighted empirical CDF of the bin's outcomes) is compared
/// against the empirical distribution obtained by conditioning on the bin.
/// Zero by construction; nonzero values flag a broken forecast pipeline.
pub fn insample_autocal_check(model: &BinModel, sample: &WeightedSample) -> Result<f64> {
    let pts = sample.points();
    let mut assignments = Vec::with_capacity(pts.len());
    for p in pts {
        assignments.push(assign_bin(model, p.x)?);
    }
    let bins = model.bins();
    let mut forecasts = Vec::with_capacity(bins);
    for g in 0..bins {
        let mut ys = Vec::new();
        let mut ws = Vec::new();
        for (p, &a) in pts.iter().zip(&assignments) {
            if a == g {
                ys.push(p.y);
                ws.push(p.weight);
            }
        }
        // Unpopulated bins issue no in-sample forecast; park a point mass
        // that the discrepancy scan will skip (no points are assigned).
        if ys.is_empty() {
            forecasts.push(StepCdf::point_mass(0.0)?);
        } else {
            forecasts.push(StepCdf::empirical(&ys, &ws)?);
        }
    }
    autocal_discrepancy(&forecasts, &assignments, sample)
}

/// Isotonic calibration of an IDR fit, checked in-sample: within every
/// maximal level set of every threshold column, the weighted mean of the
/// outcome indicators must equal the fitted value. Returns the largest
/// deviation (zero for a correct fit, up to roundoff).
pub fn insample_isocal_check(fit: &IdrFit, sample: &WeightedSample) -> Result<f64> {
    let pts = sample.points();
    let groups = fit.covariates().len();
    let mut group_of = Vec::with_capacity(pts.len());
    for p in pts {
        group_of.push(fit.group_index(p.x)?);
    }

    let thresholds = fit.thresholds();
    let mut worst: f64 = 0.0;
    let mut wsum = vec![0.0; groups];
    let mut indsum = vec![0.0; groups];
    for (ti, &t) in thresholds.iter().enumerate() {
        wsum.iter_mut().for_each(|w| *w = 0.0);
        indsum.iter_mut().for_each(|s| *s = 0.0);
        for (p, &g) in pts.iter().zip(&group_of) {
            wsum[g] += p.weight;
            if p.y <= t {
                indsum[g] += p.weight;
            }
        }
        let mut g = 0;
        while g < groups {
            let v = fit.value(g, ti);
            let mut end = g + 1;
            while end < groups && fit.value(end, ti) == v {
                end += 1;
            }
            let w: f64 = wsum[g..end].iter().sum();
            let s: f64 = indsum[g..end].iter().sum();
            if w > 0.0 {
                worst = worst.max((s / w - v).abs());
            }
            g = end;
        }
    }
    Ok(worst)
}

/// In-sample probabilistic calibration: largest violation over the given
/// levels of `mu(G(Y) < a) <= a <= mu(G(Y-) <= a)`, where `mu` weights the
/// sample points and `G` is each point's own predictive CDF.
pub fn insample_probcal_check(
    cdfs: &[StepCdf],
    sample: &WeightedSample,
    alphas: &[f64],
) -> Result<f64> {
    let pts = sample.points();
    if cdfs.len() != pts.len() {
        return Err(Error::LengthMismatch(format!(
            "{} forecast CDFs for {} sample points",
            cdfs.len(),
            pts.len()
        )));
    }
    if alphas.iter().any(|a| !(a.is_finite() && *a > 0.0 && *a < 1.0)) {
        return Err(Error::InvalidParameter("calibration levels must lie in (0, 1)".into()));
    }
    let total: f64 = sample.total_weight();
    let evals: Vec<(f64, f64, f64)> = cdfs
        .iter()
        .zip(pts)
        .map(|(cdf, p)| (cdf.eval(p.y, Side::Right), cdf.eval(p.y, Side::Left), p.weight))
        .collect();

    let mut worst: f64 = 0.0;
    for &alpha in alphas {
        let mut below = 0.0;
        let mut left_at_most = 0.0;
        for &(right, left, w) in &evals {
            if right < alpha {
                below += w;
            }
            if left <= alpha {
                left_at_most += w;
            }
        }
        worst = worst.max(below / total - alpha).max(alpha - left_at_most / total);
    }
    Ok(worst)
}

/// Kolmogorov-Smirnov distance of a sample in [0, 1] from the standard
/// uniform distribution.
pub fn ks_uniform01(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    for &v in values {
        if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
            return Err(Error::BadUniform { v });
        }
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        d = d.max((i + 1) as f64 / n - u).max(u - i as f64 / n);
    }
    Ok(d)
}

/// Histogram cell of a thickness summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Traffic-light counts of the epistemic-uncertainty classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrafficCounts {
    pub low: usize,
    pub medium: usize,
    pub high: usize,
}

/// Summary statistics of a collection of band thicknesses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThicknessStats {
    pub mean: f64,
    pub max: f64,
    /// Ten equal-width cells covering [0, 1].
    pub histogram: Vec<HistogramBin>,
    pub traffic: TrafficCounts,
}

/// Summarize band thicknesses (all in [0, 1]).
pub fn thickness_stats(values: &[f64]) -> Result<ThicknessStats> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut histogram: Vec<HistogramBin> = (0..10)
        .map(|i| HistogramBin { lo: i as f64 / 10.0, hi: (i + 1) as f64 / 10.0, count: 0 })
        .collect();
    let mut traffic = TrafficCounts::default();
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    for &t in values {
        match epistemic_class(t)? {
            EpistemicClass::Low => traffic.low += 1,
            EpistemicClass::Medium => traffic.medium += 1,
            EpistemicClass::High => traffic.high += 1,
        }
        let cell = ((t * 10.0).floor() as usize).min(9);
        histogram[cell].count += 1;
        sum += t;
        max = max.max(t);
    }
    Ok(ThicknessStats { mean: sum / values.len() as f64, max, histogram, traffic })
}

/// Reliability diagnostics at one outcome threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReliability {
    /// Percentile level the threshold was taken at.
    pub level: f64,
    pub threshold: f64,
    pub curve: Vec<ReliabilityPoint>,
    pub max_deviation: f64,
}

/// Everything the evaluation stage reports for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub mean_crps: f64,
    pub pit_sample: Vec<f64>,
    pub pp_curve: Vec<PpPoint>,
    pub reliability: Vec<ThresholdReliability>,
    pub thickness: ThicknessStats,
    /// Records that carried a flag instead of a prediction (excluded from
    /// the statistics above).
    pub flagged: usize,
}

/// Full evaluation report across methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub methods: Vec<MethodReport>,
}
