//! Conformity-measure conformal predictive systems.
//!
//! The centerpiece is the studentized least squares prediction machine: the
//! hypothesized test outcome enters the augmented regression linearly, so
//! every score comparison reduces to one linear equation and the whole
//! predictive band is described by `n` critical values. A generic grid-based
//! full-conformal construction ([`cm_numeric_band`]) accepts arbitrary
//! conformity scores and doubles as the oracle for the closed form. The
//! residual procedure (weighted empirical distribution of residuals around
//! each fitted value) rounds out the classical constructions.
//!
//! Degenerate geometry: the score gap between the test point and a training
//! point is affine in the hypothesized outcome with provably nonnegative
//! slope. Zero slope means the two scores never cross; the critical value is
//! then `-inf` or `+inf` according to the sign of the constant gap. A gap
//! that is identically zero (exact tie for every outcome) cannot be encoded
//! in a single real; we use `+inf`, which keeps the strict-count lower bound
//! exact and shrinks only the upper bound's reachable range.

use nalgebra::DMatrix;

use crate::band::{PredictiveBand, StepFn};
use crate::error::{Error, Result};
use crate::sample::WeightedSample;
use crate::step_cdf::{Side, StepCdf};

/// Slope floor below which a score gap counts as constant in the outcome.
const SLOPE_TOL: f64 = 1e-12;
/// Relative tolerance for exact-tie detection and for the grid oracle's
/// knife-edge score comparisons. Public so oracle-based tests can recognize
/// outcomes where a comparison falls inside the tie window.
pub const TIE_TOL: f64 = 1e-9;

/// Weighted least-squares fit together with the leverage quantities the
/// prediction machine needs.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    /// Regression coefficients, one per design column.
    pub coefficients: Vec<f64>,
    /// Diagonal of the hat matrix; sums to the number of design columns.
    pub hat_diagonal: Vec<f64>,
    /// Hat-matrix column for the final design row (by convention the test
    /// point sits last): `cross_leverage[k]` maps that row's outcome into
    /// fitted value `k`.
    pub cross_leverage: Vec<f64>,
}

impl LinearFit {
    /// Fitted value for a design row.
    pub fn predict(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }
}

/// Weighted least squares on an explicit design matrix (include an intercept
/// column if one is wanted). Errors on rank deficiency rather than pseudo-
/// inverting, since every consumer here treats a degenerate design as a bug
/// in the experiment setup.
pub fn wls_fit(design: &DMatrix<f64>, y: &[f64], weights: &[f64]) -> Result<LinearFit> {
    let (rows, cols) = design.shape();
    if rows != y.len() || rows != weights.len() {
        return Err(Error::LengthMismatch(format!(
            "design has {rows} rows but {} outcomes and {} weights",
            y.len(),
            weights.len()
        )));
    }
    if rows < cols {
        return Err(Error::TooFewRows { rows, cols });
    }
    for (i, v) in design.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { what: "design entry", index: i });
        }
    }
    for (i, &v) in y.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { what: "outcome", index: i });
        }
    }
    for (i, &w) in weights.iter().enumerate() {
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::BadWeight { index: i });
        }
    }

    let mut xtwx = DMatrix::<f64>::zeros(cols, cols);
    let mut xtwy = vec![0.0; cols];
    for i in 0..rows {
        let w = weights[i];
        for a in 0..cols {
            let xa = design[(i, a)];
            xtwy[a] += w * xa * y[i];
            for b in 0..cols {
                xtwx[(a, b)] += w * xa * design[(i, b)];
            }
        }
    }
    let m = xtwx.try_inverse().ok_or(Error::RankDeficient)?;

    let mut coefficients = vec![0.0; cols];
    for a in 0..cols {
        for b in 0..cols {
            coefficients[a] += m[(a, b)] * xtwy[b];
        }
    }

    // h_i = w_i x_i' M x_i; cross_leverage_i = H[i, last] = x_i' M x_last w_last.
    let quad = |i: usize, j: usize| -> f64 {
        let mut s = 0.0;
        for a in 0..cols {
            for b in 0..cols {
                s += design[(i, a)] * m[(a, b)] * design[(j, b)];
            }
        }
        s
    };
    let last = rows - 1;
    let mut hat_diagonal = Vec::with_capacity(rows);
    let mut cross_leverage = Vec::with_capacity(rows);
    for i in 0..rows {
        hat_diagonal.push(weights[i] * quad(i, i));
        cross_leverage.push(weights[last] * quad(i, last));
    }
    Ok(LinearFit { coefficients, hat_diagonal, cross_leverage })
}

/// Stack covariate rows into a design matrix with a leading intercept column.
/// Empty covariate vectors give the pure location (intercept-only) design.
fn design_with_intercept(xs: &[Vec<f64>], dim: usize) -> Result<DMatrix<f64>> {
    for (i, row) in xs.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::LengthMismatch(format!(
                "covariate row {i} has {} entries, expected {dim}",
                row.len()
            )));
        }
        if let Some(_bad) = row.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "covariate", index: i });
        }
    }
    Ok(DMatrix::from_fn(xs.len(), dim + 1, |i, j| if j == 0 { 1.0 } else { xs[i][j - 1] }))
}

/// Studentized least-squares conformity score of point `index` within the
/// (augmented) sample: the OLS residual divided by `sqrt(1 - h_index)`. The
/// design is the covariates with a prepended intercept.
pub fn lspm_score(xs: &[Vec<f64>], ys: &[f64], index: usize) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch(format!(
            "{} covariate rows, {} outcomes",
            xs.len(),
            ys.len()
        )));
    }
    if index >= ys.len() {
        return Err(Error::InvalidParameter(format!("score index {index} out of range")));
    }
    let dim = xs.first().map_or(0, Vec::len);
    let design = design_with_intercept(xs, dim)?;
    let weights = vec![1.0; ys.len()];
    let fit = wls_fit(&design, ys, &weights)?;
    let resid_var = 1.0 - fit.hat_diagonal[index];
    if resid_var <= SLOPE_TOL {
        return Err(Error::LeverageOne { index });
    }
    let mut row = vec![1.0];
    row.extend_from_slice(&xs[index]);
    Ok((ys[index] - fit.predict(&row)) / resid_var.sqrt())
}

/// Critical values of the studentized least squares prediction machine:
/// `C_i` is the hypothesized outcome at which the test point's score crosses
/// training score `i`. Sorted ascending; `±inf` encode comparisons that never
/// cross. Pass empty covariate vectors for the pure location model.
pub fn lspm_critical_values(
    train_x: &[Vec<f64>],
    train_y: &[f64],
    x_new: &[f64],
) -> Result<Vec<f64>> {
    let n = train_y.len();
    if n == 0 {
        return Err(Error::EmptySample);
    }
    if train_x.len() != n {
        return Err(Error::LengthMismatch(format!(
            "{} covariate rows, {n} outcomes",
            train_x.len()
        )));
    }
    for (i, &v) in train_y.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { what: "outcome", index: i });
        }
    }
    if let Some(_bad) = x_new.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "covariate", index: n });
    }
    let dim = x_new.len();
    let (rows, cols) = (n + 1, dim + 1);
    if rows <= cols {
        return Err(Error::TooFewRows { rows, cols });
    }

    let mut aug: Vec<Vec<f64>> = Vec::with_capacity(rows);
    aug.extend(train_x.iter().cloned());
    aug.push(x_new.to_vec());
    let design = design_with_intercept(&aug, dim)?;

    // Fit against the train outcomes with a zero placeholder for the test
    // row; fitted values of this fit are the constant parts of the augmented
    // fit, and the hypothesized outcome enters through cross_leverage.
    let mut y0 = train_y.to_vec();
    y0.push(0.0);
    let weights = vec![1.0; rows];
    let fit = wls_fit(&design, &y0, &weights)?;

    let resid = |k: usize| -> Result<f64> {
        let v = 1.0 - fit.hat_diagonal[k];
        if v <= SLOPE_TOL {
            return Err(Error::LeverageOne { index: k });
        }
        Ok(v.sqrt())
    };
    let base = |k: usize| -> f64 {
        let mut row = vec![1.0];
        row.extend_from_slice(&aug[k]);
        fit.predict(&row)
    };

    let r_star = resid(n)?;
    let base_star = base(n);
    let star_term = base_star / r_star;

    let mut critical = Vec::with_capacity(n);
    for k in 0..n {
        let r_k = resid(k)?;
        let train_term = (train_y[k] - base(k)) / r_k;
        // Score gap (test minus train) as a function of the hypothesized
        // outcome y: slope * y + intercept. The slope is nonnegative by the
        // Cauchy-Schwarz inequality on the residual projector.
        let slope = r_star + fit.cross_leverage[k] / r_k;
        let intercept = -star_term - train_term;
        let c = if slope > SLOPE_TOL {
            -intercept / slope
        } else if intercept.abs() <= TIE_TOL * (1.0 + star_term.abs() + train_term.abs()) {
            // Identically tied scores: encode as +inf (see module docs).
            f64::INFINITY
        } else if intercept > 0.0 {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        };
        critical.push(c);
    }
    critical.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(critical)
}

/// Critical values of the pure location model in closed form: the scores
/// reduce to centered residuals with a common scale, so the crossings are
/// the training outcomes themselves.
pub fn lspm_location_critical_values(ys: &[f64]) -> Result<Vec<f64>> {
    if ys.is_empty() {
        return Err(Error::EmptySample);
    }
    for (i, &v) in ys.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { what: "outcome", index: i });
        }
    }
    let mut sorted = ys.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(sorted)
}

/// Predictive band from sorted critical values: with `n` values,
/// `lower(y) = #{C_i < y} / (n + 1)` (strict count; the band evaluates its
/// lower bound as a left limit) and `upper(y) = (#{C_i <= y} + 1) / (n + 1)`.
/// Infinite critical values shrink the reachable range at the corresponding
/// end, producing a relaxed (non-proper) band.
pub fn lspm_band(critical: &[f64]) -> Result<PredictiveBand> {
    if critical.is_empty() {
        return Err(Error::EmptySample);
    }
    for (i, &c) in critical.iter().enumerate() {
        if c.is_nan() {
            return Err(Error::NonFinite { what: "critical value", index: i });
        }
    }
    if critical.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParameter("critical values are not sorted".into()));
    }
    let n = critical.len();
    let denom = (n + 1) as f64;
    let n_neg = critical.iter().take_while(|c| **c == f64::NEG_INFINITY).count();
    let n_pos = critical.iter().rev().take_while(|c| **c == f64::INFINITY).count();
    let finite = &critical[n_neg..n - n_pos];

    let mut jumps: Vec<f64> = Vec::new();
    let mut cum: Vec<usize> = Vec::new();
    for (i, &c) in finite.iter().enumerate() {
        if jumps.last() == Some(&c) {
            *cum.last_mut().unwrap() = i + 1;
        } else {
            jumps.push(c);
            cum.push(i + 1);
        }
    }
    let lower_levels: Vec<f64> = cum.iter().map(|&k| (n_neg + k) as f64 / denom).collect();
    let upper_levels: Vec<f64> = cum.iter().map(|&k| (n_neg + k + 1) as f64 / denom).collect();
    let lower = StepFn::new(n_neg as f64 / denom, jumps.clone(), lower_levels)?;
    let upper = StepFn::new((n_neg + 1) as f64 / denom, jumps, upper_levels)?;
    if n_neg == 0 && n_pos == 0 {
        PredictiveBand::from_bounds_with_side(lower, upper, Side::Left)
    } else {
        PredictiveBand::from_bounds_relaxed(lower, upper, Side::Left)
    }
}

/// Generic full-conformal band on an outcome grid: for every grid value the
/// augmented sample is rescored from scratch and the test score is ranked
/// among the training scores. Serves as the oracle for the closed-form
/// machine and hosts arbitrary (including split/pre-trained) conformity
/// measures. Score comparisons use a small relative tie tolerance so that
/// grid points placed exactly at crossings resolve like the exact
/// arithmetic. Errors with `NonMonotoneScore` if either bound decreases
/// along the grid, which indicates a conformity measure without the
/// monotone-crossing property.
pub fn cm_numeric_band<F>(
    score_fn: F,
    train_x: &[Vec<f64>],
    train_y: &[f64],
    x_new: &[f64],
    y_grid: &[f64],
) -> Result<PredictiveBand>
where
    F: Fn(&[Vec<f64>], &[f64], usize) -> Result<f64>,
{
    let n = train_y.len();
    if n == 0 {
        return Err(Error::EmptySample);
    }
    if train_x.len() != n {
        return Err(Error::LengthMismatch(format!(
            "{} covariate rows, {n} outcomes",
            train_x.len()
        )));
    }
    if y_grid.is_empty() {
        return Err(Error::InvalidParameter("empty outcome grid".into()));
    }
    for (i, &g) in y_grid.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::NonFinite { what: "grid value", index: i });
        }
    }
    if y_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("outcome grid must be strictly increasing".into()));
    }

    let mut aug_x: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    aug_x.extend(train_x.iter().cloned());
    aug_x.push(x_new.to_vec());
    let mut aug_y = train_y.to_vec();
    aug_y.push(0.0);

    let denom = (n + 1) as f64;
    let mut lower_vals = Vec::with_capacity(y_grid.len());
    let mut upper_vals = Vec::with_capacity(y_grid.len());
    for (gi, &y) in y_grid.iter().enumerate() {
        aug_y[n] = y;
        let s_star = score_fn(&aug_x, &aug_y, n)?;
        let mut lt = 0usize;
        let mut le = 0usize;
        for k in 0..n {
            let s_k = score_fn(&aug_x, &aug_y, k)?;
            let tol = TIE_TOL * (1.0 + s_star.abs().max(s_k.abs()));
            if s_k < s_star - tol {
                lt += 1;
            }
            if s_k <= s_star + tol {
                le += 1;
            }
        }
        let lo = lt as f64 / denom;
        let up = (le + 1) as f64 / denom;
        if lower_vals.last().is_some_and(|&prev| lo < prev)
            || upper_vals.last().is_some_and(|&prev| up < prev)
        {
            return Err(Error::NonMonotoneScore { index: gi });
        }
        lower_vals.push(lo);
        upper_vals.push(up);
    }

    let step_from_grid = |vals: &[f64]| -> Result<StepFn> {
        let mut jumps = Vec::new();
        let mut levels = Vec::new();
        for (i, &v) in vals.iter().enumerate().skip(1) {
            if v > vals[i - 1] {
                jumps.push(y_grid[i]);
                levels.push(v);
            }
        }
        StepFn::new(vals[0], jumps, levels)
    };
    let lower = step_from_grid(&lower_vals)?;
    let upper = step_from_grid(&upper_vals)?;
    PredictiveBand::from_bounds_relaxed(lower, upper, Side::Right)
}

/// The residual procedure: center the weighted empirical distribution of the
/// in-sample residuals at each fitted value. Returns one predictive CDF per
/// sample point.
pub fn residual_procedure(sample: &WeightedSample, fitted: &[f64]) -> Result<Vec<StepCdf>> {
    let pts = sample.points();
    if fitted.len() != pts.len() {
        return Err(Error::LengthMismatch(format!(
            "{} fitted values for {} sample points",
            fitted.len(),
            pts.len()
        )));
    }
    for (i, &f) in fitted.iter().enumerate() {
        if !f.is_finite() {
            return Err(Error::NonFinite { what: "fitted value", index: i });
        }
    }
    let residuals: Vec<f64> = pts.iter().zip(fitted).map(|(p, f)| p.y - f).collect();
    let weights: Vec<f64> = pts.iter().map(|p| p.weight).collect();
    let mut cdfs = Vec::with_capacity(pts.len());
    let mut values = vec![0.0; pts.len()];
    for &f_k in fitted {
        for (v, r) in values.iter_mut().zip(&residuals) {
            *v = f_k + r;
        }
        cdfs.push(StepCdf::empirical(&values, &weights)?);
    }
    Ok(cdfs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_design(xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(xs.len(), 2, |i, j| if j == 0 { 1.0 } else { xs[i] })
    }

    #[test]
    fn wls_intercept_only_is_weighted_mean() {
        let design = DMatrix::from_element(3, 1, 1.0);
        let fit = wls_fit(&design, &[1.0, 2.0, 7.0], &[1.0, 2.0, 1.0]).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], 12.0 / 4.0, epsilon = 1e-12);
        for (h, w) in fit.hat_diagonal.iter().zip([1.0, 2.0, 1.0]) {
            assert_abs_diff_eq!(*h, w / 4.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn wls_leverages_match_closed_form() {
        // Unweighted simple regression: h_i = 1/n + (x_i - mean)^2 / ss.
        let xs = [0.0, 1.0, 2.0];
        let fit = wls_fit(&unit_design(&xs), &[1.0, 0.0, 3.0], &[1.0; 3]).unwrap();
        let mean = 1.0;
        let ss = 2.0;
        for (i, &x) in xs.iter().enumerate() {
            let h = 1.0 / 3.0 + (x - mean).powi(2) / ss;
            assert_abs_diff_eq!(fit.hat_diagonal[i], h, epsilon = 1e-12);
        }
        let trace: f64 = fit.hat_diagonal.iter().sum();
        assert_abs_diff_eq!(trace, 2.0, epsilon = 1e-12);
        // Cross leverage against an explicit normal-equations solve.
        // M = (X'X)^{-1} for X'X = [[3, 3], [3, 5]] is [[5, -3], [-3, 3]]/6.
        let m = [[5.0 / 6.0, -0.5], [-0.5, 0.5]];
        for (i, &x) in xs.iter().enumerate() {
            let expected = m[0][0] + m[0][1] * 2.0 + x * (m[1][0] + m[1][1] * 2.0);
            assert_abs_diff_eq!(fit.cross_leverage[i], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn splitting_a_weighted_row_halves_its_leverage() {
        let weighted =
            wls_fit(&unit_design(&[0.0, 1.0, 2.0]), &[1.0, 0.0, 3.0], &[2.0, 1.0, 1.0]).unwrap();
        let split = wls_fit(
            &unit_design(&[0.0, 0.0, 1.0, 2.0]),
            &[1.0, 1.0, 0.0, 3.0],
            &[1.0; 4],
        )
        .unwrap();
        for c in 0..2 {
            assert_abs_diff_eq!(weighted.coefficients[c], split.coefficients[c], epsilon = 1e-12);
        }
        assert_abs_diff_eq!(split.hat_diagonal[0], weighted.hat_diagonal[0] / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(split.hat_diagonal[1], weighted.hat_diagonal[0] / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn wls_rejects_bad_inputs() {
        let d = unit_design(&[0.0, 1.0]);
        assert!(matches!(wls_fit(&d, &[1.0], &[1.0, 1.0]), Err(Error::LengthMismatch(_))));
        assert!(matches!(
            wls_fit(&d, &[1.0, 2.0], &[1.0, -1.0]),
            Err(Error::BadWeight { index: 1 })
        ));
        let tall = DMatrix::from_element(1, 2, 1.0);
        assert!(matches!(
            wls_fit(&tall, &[1.0], &[1.0]),
            Err(Error::TooFewRows { rows: 1, cols: 2 })
        ));
        // Two identical columns: exactly rank deficient.
        let dup = DMatrix::from_fn(3, 2, |i, _| i as f64);
        assert!(matches!(wls_fit(&dup, &[1.0, 2.0, 3.0], &[1.0; 3]), Err(Error::RankDeficient)));
    }

    #[test]
    fn location_model_critical_values_are_the_outcomes() {
        let ys = [3.0, -1.0, 2.0];
        let closed = lspm_location_critical_values(&ys).unwrap();
        assert_eq!(closed, vec![-1.0, 2.0, 3.0]);
        // The matrix path with an empty covariate (intercept-only design)
        // must agree up to roundoff.
        let xs = vec![vec![]; 3];
        let matrix = lspm_critical_values(&xs, &ys, &[]).unwrap();
        for (a, b) in matrix.iter().zip(&closed) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-9);
        }
    }

    #[test]
    fn symmetric_two_point_location_example() {
        let matrix = lspm_critical_values(&[vec![], vec![]], &[0.0, 2.0], &[]).unwrap();
        assert_abs_diff_eq!(matrix[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(matrix[1], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn band_counting_for_single_critical_value() {
        let band = lspm_band(&[0.0]).unwrap();
        assert_eq!(band.lower_at(0.0), 0.0);
        assert_eq!(band.lower_at(1e-9), 0.5);
        assert_eq!(band.upper_at(-1e-9), 0.5);
        assert_eq!(band.upper_at(0.0), 1.0);
        assert_eq!(band.thickness(), 0.5);
    }

    #[test]
    fn band_thickness_is_one_over_n_plus_one() {
        let critical = [-2.0, -0.5, 0.25, 3.0, 7.0];
        let band = lspm_band(&critical).unwrap();
        assert!((band.thickness() - 1.0 / 6.0).abs() <= 1e-15);
    }

    #[test]
    fn band_rejects_unsorted_and_nan() {
        assert!(matches!(lspm_band(&[1.0, 0.0]), Err(Error::InvalidParameter(_))));
        assert!(matches!(
            lspm_band(&[0.0, f64::NAN]),
            Err(Error::NonFinite { what: "critical value", .. })
        ));
    }

    /// A saturated augmented design: two training points and a test covariate
    /// that leaves a one-dimensional residual space aligned with the first
    /// training point. One comparison never crosses (tied scores for every
    /// hypothesized outcome), so its critical value degenerates to +inf.
    #[test]
    fn saturated_design_yields_an_infinite_critical_value() {
        let xs = vec![vec![0.0], vec![1.0]];
        let ys = [0.0, 2.0];
        let critical = lspm_critical_values(&xs, &ys, &[3.0]).unwrap();
        assert_abs_diff_eq!(critical[0], 6.0, epsilon = 1e-9);
        assert_eq!(critical[1], f64::INFINITY);

        let band = lspm_band(&critical).unwrap();
        // Lower bound: exact strict counting, 0 -> 1/3 across the finite
        // critical value (probe at the computed crossing, which sits within
        // roundoff of 6 but not necessarily on it).
        assert_eq!(band.lower_at(critical[0]), 0.0);
        assert_abs_diff_eq!(band.lower_at(6.1), 1.0 / 3.0, epsilon = 1e-15);
        // Upper bound: the tied comparison is not representable, so the
        // terminal level stops at 2/3 instead of 1 (reduced reachable range).
        assert_abs_diff_eq!(band.upper_at(7.0), 2.0 / 3.0, epsilon = 1e-15);

        // The grid oracle confirms the lower bound exactly, including at the
        // crossing itself.
        let grid = [-1.0, 0.0, 3.0, critical[0], 9.0, 20.0];
        let oracle = cm_numeric_band(lspm_score, &xs, &ys, &[3.0], &grid).unwrap();
        for &g in &grid {
            assert_abs_diff_eq!(oracle.lower_at(g), band.lower_at(g), epsilon = 1e-10);
        }
    }

    #[test]
    fn location_band_matches_outcome_score_oracle() {
        // Covariate-free conformity score = outcome value: the band must be
        // the plain counting band of the training outcomes.
        let ys = [1.0, 3.0, 2.0];
        let xs = vec![vec![]; 3];
        let grid = [0.0, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0];
        let oracle =
            cm_numeric_band(|_, aug_y, k| Ok(aug_y[k]), &xs, &ys, &[], &grid).unwrap();
        let band = lspm_band(&lspm_location_critical_values(&ys).unwrap()).unwrap();
        for &g in &grid {
            assert_abs_diff_eq!(oracle.lower_at(g), band.lower_at(g), epsilon = 1e-12);
            assert_abs_diff_eq!(oracle.upper_at(g), band.upper_at(g), epsilon = 1e-12);
        }
    }

    #[test]
    fn non_monotone_score_is_flagged() {
        // Negated outcome score: the test score decreases in y while the
        // training scores stay put, so the counting bound must decrease.
        let ys = [0.0, 1.0];
        let xs = vec![vec![]; 2];
        let err = cm_numeric_band(|_, aug_y, k| Ok(-aug_y[k]), &xs, &ys, &[], &[-1.0, 0.5, 2.0]);
        assert!(matches!(err, Err(Error::NonMonotoneScore { .. })));
    }

    #[test]
    fn leverage_one_is_reported() {
        // Duplicated training covariate with a distinct test covariate makes
        // the test row self-determining (leverage 1).
        let xs = vec![vec![0.0], vec![0.0]];
        let err = lspm_critical_values(&xs, &[1.0, 2.0], &[1.0]);
        assert!(matches!(err, Err(Error::LeverageOne { .. })));
    }

    #[test]
    fn residual_procedure_with_zero_fit_recovers_the_empirical_cdf() {
        let sample =
            WeightedSample::from_xy(&[(0.0, 1.0), (1.0, 2.0), (2.0, 4.0)]).unwrap();
        let cdfs = residual_procedure(&sample, &[0.0, 0.0, 0.0]).unwrap();
        let empirical = StepCdf::empirical(&[1.0, 2.0, 4.0], &[1.0; 3]).unwrap();
        for cdf in &cdfs {
            assert_eq!(cdf, &empirical);
        }
    }

    #[test]
    fn residual_procedure_with_perfect_fit_gives_point_masses() {
        let sample = WeightedSample::from_xy(&[(0.0, 1.0), (1.0, 2.0)]).unwrap();
        let cdfs = residual_procedure(&sample, &[1.0, 2.0]).unwrap();
        assert_eq!(cdfs[0], StepCdf::point_mass(1.0).unwrap());
        assert_eq!(cdfs[1], StepCdf::point_mass(2.0).unwrap());
    }

    #[test]
    fn residual_procedure_hand_count_with_unequal_weights() {
        let sample = WeightedSample::new(vec![
            crate::sample::SamplePoint { x: 0.0, y: 1.0, weight: 1.0 },
            crate::sample::SamplePoint { x: 1.0, y: 2.0, weight: 2.0 },
            crate::sample::SamplePoint { x: 2.0, y: 4.0, weight: 1.0 },
        ])
        .unwrap();
        // Residuals: 1, 2, 1. CDF at fitted value 0: mass 1/2 at 1 (two
        // residuals of 1 with weights 1+1), mass 1/2 at 2.
        let cdfs = residual_procedure(&sample, &[0.0, 0.0, 3.0]).unwrap();
        assert_eq!(cdfs[0].jumps(), &[1.0, 2.0]);
        assert_eq!(cdfs[0].cum(), &[0.5, 1.0]);
        // Centered at 3: values {4, 5}.
        assert_eq!(cdfs[2].jumps(), &[4.0, 5.0]);
        assert_eq!(cdfs[2].cum(), &[0.5, 1.0]);
    }

    #[test]
    fn residual_procedure_rejects_misaligned_fit() {
        let sample = WeightedSample::from_xy(&[(0.0, 1.0)]).unwrap();
        assert!(matches!(
            residual_procedure(&sample, &[1.0, 2.0]),
            Err(Error::LengthMismatch(_))
        ));
    }

    mod proptests {
        use super::*;
        use proptest::prelude::*;

        fn grid_with_criticals(critical: &[f64], lo: f64, hi: f64) -> Vec<f64> {
            let mut grid: Vec<f64> =
                critical.iter().copied().filter(|c| c.is_finite()).collect();
            grid.push(lo);
            grid.push(hi);
            grid.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            grid.dedup();
            let mids: Vec<f64> = grid.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
            grid.extend(mids);
            grid.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            grid.dedup();
            grid
        }

        /// The closed form and the grid oracle can only disagree where some
        /// comparison other than the probe's own crossing falls inside the
        /// oracle's tie window: its tolerance lives in score space, so a gap
        /// of a few tolerances maps to an outcome distance of gap/slope,
        /// which no fixed probe separation can bound. Such probes carry no
        /// information about either implementation and are skipped.
        fn ambiguous_probe(
            xs: &[Vec<f64>],
            ys: &[f64],
            x_new: f64,
            critical: &[f64],
            g: f64,
        ) -> bool {
            let n = ys.len();
            let mut aug_x = xs.to_vec();
            aug_x.push(vec![x_new]);
            let mut aug_y = ys.to_vec();
            aug_y.push(g);
            let s_star = lspm_score(&aug_x, &aug_y, n).unwrap();
            (0..n).any(|k| {
                if critical[k] == g {
                    return false;
                }
                let s_k = lspm_score(&aug_x, &aug_y, k).unwrap();
                (s_k - s_star).abs() <= 50.0 * TIE_TOL * (1.0 + s_star.abs().max(s_k.abs()))
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(40))]

            /// Acceptance oracle: the closed-form band equals the refitting
            /// grid oracle at every grid point, including the critical
            /// values themselves.
            #[test]
            fn closed_form_matches_grid_oracle(
                pts in proptest::collection::vec((-5.0f64..5.0, -10.0f64..10.0), 2..8),
                x_new in -6.0f64..6.0,
            ) {
                let xs: Vec<Vec<f64>> = pts.iter().map(|p| vec![p.0]).collect();
                let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
                let critical = match lspm_critical_values(&xs, &ys, &[x_new]) {
                    Ok(c) => c,
                    // Random draws can land on (near-)degenerate designs.
                    Err(Error::LeverageOne { .. }) | Err(Error::RankDeficient) => return Ok(()),
                    Err(e) => return Err(TestCaseError::fail(e.to_string())),
                };
                prop_assume!(critical.iter().all(|c| c.is_finite()));
                let band = lspm_band(&critical).unwrap();
                let lo = critical.iter().copied().fold(f64::INFINITY, f64::min) - 3.0;
                let hi = critical.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0;
                let grid = grid_with_criticals(&critical, lo, hi);
                let oracle = cm_numeric_band(lspm_score, &xs, &ys, &[x_new], &grid).unwrap();
                for &g in &grid {
                    if ambiguous_probe(&xs, &ys, x_new, &critical, g) {
                        continue;
                    }
                    prop_assert!((oracle.lower_at(g) - band.lower_at(g)).abs() <= 1e-10,
                        "lower mismatch at {g}: {} vs {}", oracle.lower_at(g), band.lower_at(g));
                    prop_assert!((oracle.upper_at(g) - band.upper_at(g)).abs() <= 1e-10,
                        "upper mismatch at {g}: {} vs {}", oracle.upper_at(g), band.upper_at(g));
                }
            }

            /// The augmented fit is affine in the hypothesized outcome:
            /// coefficients extrapolate linearly between any two fits.
            #[test]
            fn augmented_fit_is_affine_in_y(
                pts in proptest::collection::vec((-5.0f64..5.0, -10.0f64..10.0), 3..10),
                x_new in -6.0f64..6.0,
                (ya, yb, yc) in (-20.0f64..20.0, 30.0f64..70.0, -120.0f64..120.0),
            ) {
                let mut xs: Vec<Vec<f64>> = pts.iter().map(|p| vec![p.0]).collect();
                xs.push(vec![x_new]);
                let mut ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
                ys.push(0.0);
                let n = pts.len();
                let design = design_with_intercept(&xs, 1).unwrap();
                let w = vec![1.0; n + 1];
                let mut fit_at = |y: f64| -> Vec<f64> {
                    ys[n] = y;
                    wls_fit(&design, &ys, &w).unwrap().coefficients
                };
                let ca = fit_at(ya);
                let cb = fit_at(yb);
                let cc = fit_at(yc);
                let t = (yc - ya) / (yb - ya);
                for j in 0..2 {
                    let extrapolated = ca[j] + t * (cb[j] - ca[j]);
                    let scale = 1.0 + cc[j].abs().max(extrapolated.abs());
                    prop_assert!((extrapolated - cc[j]).abs() <= 1e-8 * scale);
                }
            }

            /// Shifting every outcome (train and hypothesized) by a constant
            /// shifts every critical value by that constant.
            #[test]
            fn critical_values_are_translation_equivariant(
                pts in proptest::collection::vec((-5.0f64..5.0, -10.0f64..10.0), 2..8),
                x_new in -6.0f64..6.0,
                shift in -50.0f64..50.0,
            ) {
                let xs: Vec<Vec<f64>> = pts.iter().map(|p| vec![p.0]).collect();
                let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
                let shifted: Vec<f64> = ys.iter().map(|y| y + shift).collect();
                let base = match lspm_critical_values(&xs, &ys, &[x_new]) {
                    Ok(c) => c,
                    Err(_) => return Ok(()),
                };
                let moved = match lspm_critical_values(&xs, &shifted, &[x_new]) {
                    Ok(c) => c,
                    Err(_) => return Ok(()),
                };
                for (a, b) in base.iter().zip(&moved) {
                    if a.is_finite() {
                        prop_assert!((a + shift - b).abs() <= 1e-7 * (1.0 + a.abs() + shift.abs()));
                    } else {
                        prop_assert_eq!(*a, *b);
                    }
                }
            }

            /// Hat-matrix invariants on random full-rank designs.
            #[test]
            fn leverages_sum_to_the_parameter_count(
                pts in proptest::collection::vec((-5.0f64..5.0, -10.0f64..10.0), 3..12),
            ) {
                let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
                let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
                let mut sorted = xs.clone();
                sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
                sorted.dedup();
                prop_assume!(sorted.len() >= 2);
                let fit = wls_fit(&unit_design(&xs), &ys, &vec![1.0; xs.len()]).unwrap();
                let trace: f64 = fit.hat_diagonal.iter().sum();
                prop_assert!((trace - 2.0).abs() <= 1e-8);
                for &h in &fit.hat_diagonal {
                    prop_assert!((-1e-10..=1.0 + 1e-10).contains(&h));
                }
            }

            /// The lower bound of the band built from critical values is a
            /// proper band when all values are finite.
            #[test]
            fn finite_critical_values_build_proper_bands(
                critical in proptest::collection::vec(-50.0f64..50.0, 1..20),
            ) {
                let mut sorted = critical.clone();
                sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
                let band = lspm_band(&sorted).unwrap();
                prop_assert_eq!(band.lower().initial(), 0.0);
                prop_assert_eq!(band.upper().terminal(), 1.0);
                let n = sorted.len() as f64;
                prop_assert!((band.thickness() - 1.0 / (n + 1.0)).abs() <= 1e-15);
            }
        }
    }
}
