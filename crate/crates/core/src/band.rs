//! Predictive bands: pairs of nondecreasing step functions bracketing every
//! predictive CDF a conformal system licenses, plus the operations that turn
//! a band into a single ("crisp") CDF and into an epistemic traffic light.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::step_cdf::{Side, StepCdf};

/// Right-continuous nondecreasing step function into `[0, 1]`, stored as the
/// level before any jump (`initial`) plus jump locations and post-jump levels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepFn {
    initial: f64,
    jumps: Vec<f64>,
    levels: Vec<f64>,
}

impl StepFn {
    pub fn new(initial: f64, jumps: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        if jumps.len() != levels.len() {
            return Err(Error::LengthMismatch(format!(
                "{} jumps vs {} levels",
                jumps.len(),
                levels.len()
            )));
        }
        if !(initial.is_finite() && (0.0..=1.0).contains(&initial)) {
            return Err(Error::InvalidBand(format!("initial level {initial} outside [0, 1]")));
        }
        let mut prev = initial;
        for (i, (&j, &l)) in jumps.iter().zip(&levels).enumerate() {
            if !j.is_finite() {
                return Err(Error::NonFinite { what: "jump", index: i });
            }
            if i > 0 && !(j > jumps[i - 1]) {
                return Err(Error::InvalidBand(format!(
                    "jumps not strictly increasing at index {i}"
                )));
            }
            if !(l.is_finite() && (0.0..=1.0 + 1e-12).contains(&l)) {
                return Err(Error::InvalidBand(format!("level {l} at index {i} outside [0, 1]")));
            }
            if l < prev {
                return Err(Error::InvalidBand(format!(
                    "levels decrease at index {i} ({l} after {prev})"
                )));
            }
            prev = l;
        }
        let levels = levels.into_iter().map(|l| l.min(1.0)).collect();
        Ok(Self { initial, jumps, levels })
    }

    /// Constant function.
    pub fn constant(level: f64) -> Result<Self> {
        Self::new(level, Vec::new(), Vec::new())
    }

    pub fn from_cdf(cdf: &StepCdf) -> Self {
        Self {
            initial: 0.0,
            jumps: cdf.jumps().to_vec(),
            levels: cdf.cum().to_vec(),
        }
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }

    pub fn jumps(&self) -> &[f64] {
        &self.jumps
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn terminal(&self) -> f64 {
        self.levels.last().copied().unwrap_or(self.initial)
    }

    pub fn eval(&self, y: f64, side: Side) -> f64 {
        let idx = match side {
            Side::Right => self.jumps.partition_point(|&j| j <= y),
            Side::Left => self.jumps.partition_point(|&j| j < y),
        };
        if idx == 0 {
            self.initial
        } else {
            self.levels[idx - 1]
        }
    }
}

impl<'de> Deserialize<'de> for StepFn {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        struct Raw {
            initial: f64,
            jumps: Vec<f64>,
            levels: Vec<f64>,
        }
        let raw = Raw::deserialize(deserializer)?;
        StepFn::new(raw.initial, raw.jumps, raw.levels).map_err(serde::de::Error::custom)
    }
}

/// A predictive band `(lower, upper)`.
///
/// Both bounds are nondecreasing step functions with `lower <= upper`
/// pointwise. A *proper* band additionally satisfies the limit conditions
/// `lower -> 0` at `-inf` and `upper -> 1` at `+inf`; every band produced by
/// the fitting pipelines is proper, but classical-conformity bands built from
/// infinite critical values may have a reduced reachable range and are kept
/// representable (see [`crate::lspm::lspm_band`]).
///
/// `lower_side` records the evaluation convention for the lower bound:
/// `Side::Left` means the bound is the *left limit* of the stored step
/// function (classical systems count strict score inequalities, which makes
/// their lower bound left-continuous at its jumps).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictiveBand {
    lower: StepFn,
    upper: StepFn,
    lower_side: Side,
}

impl PredictiveBand {
    /// Proper band: enforces the limit conditions in addition to shape checks.
    pub fn from_bounds(lower: StepFn, upper: StepFn) -> Result<Self> {
        Self::build(lower, upper, Side::Right, true)
    }

    /// Proper band whose lower bound is evaluated on the given side (strict
    /// counting constructions need `Side::Left`).
    pub fn from_bounds_with_side(lower: StepFn, upper: StepFn, lower_side: Side) -> Result<Self> {
        Self::build(lower, upper, lower_side, true)
    }

    /// Shape-checked band without the limit conditions, for classical systems
    /// whose degenerate cases genuinely cannot reach 0 or 1.
    pub fn from_bounds_relaxed(lower: StepFn, upper: StepFn, lower_side: Side) -> Result<Self> {
        Self::build(lower, upper, lower_side, false)
    }

    fn build(lower: StepFn, mut upper: StepFn, lower_side: Side, proper: bool) -> Result<Self> {
        if proper {
            if lower.initial != 0.0 {
                return Err(Error::InvalidBand(format!(
                    "lower bound starts at {}, not 0",
                    lower.initial
                )));
            }
            let term = upper.terminal();
            if (term - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidBand(format!(
                    "upper bound ends at {term}, not 1"
                )));
            }
            if let Some(l) = upper.levels.last_mut() {
                *l = 1.0;
            } else {
                upper.initial = 1.0;
            }
        }
        let band = Self { lower, upper, lower_side };
        if band.upper.initial < band.lower.initial {
            return Err(Error::InvalidBand("upper < lower before the first jump".into()));
        }
        for &b in &band.breakpoints() {
            let (l, u) = (band.lower.eval(b, Side::Right), band.upper.eval(b, Side::Right));
            if u < l {
                return Err(Error::InvalidBand(format!("upper < lower at breakpoint {b}")));
            }
        }
        Ok(band)
    }

    pub fn lower(&self) -> &StepFn {
        &self.lower
    }

    pub fn upper(&self) -> &StepFn {
        &self.upper
    }

    pub fn lower_side(&self) -> Side {
        self.lower_side
    }

    /// Value of the lower bound at `y` under the band's evaluation convention.
    pub fn lower_at(&self, y: f64) -> f64 {
        self.lower.eval(y, self.lower_side)
    }

    /// Value of the upper bound at `y` (always right-continuous).
    pub fn upper_at(&self, y: f64) -> f64 {
        self.upper.eval(y, Side::Right)
    }

    /// Merged, sorted, deduplicated jump locations of both bounds.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut bps: Vec<f64> = self
            .lower
            .jumps
            .iter()
            .chain(&self.upper.jumps)
            .copied()
            .collect();
        bps.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        bps.dedup();
        bps
    }

    /// Band thickness: the smallest `eps` such that `upper - lower <= eps`
    /// everywhere except at finitely many points. Since both bounds are step
    /// functions, this is the supremum of `upper - lower` over the open
    /// intervals between breakpoints; isolated spikes at the breakpoints
    /// themselves do not count.
    pub fn thickness(&self) -> f64 {
        let mut sup = self.upper.initial - self.lower.initial;
        for &b in &self.breakpoints() {
            let gap = self.upper.eval(b, Side::Right) - self.lower.eval(b, Side::Right);
            sup = sup.max(gap);
        }
        sup.max(0.0)
    }
}

impl<'de> Deserialize<'de> for PredictiveBand {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        struct Raw {
            lower: StepFn,
            upper: StepFn,
            lower_side: Side,
        }
        let raw = Raw::deserialize(deserializer)?;
        PredictiveBand::from_bounds_relaxed(raw.lower, raw.upper, raw.lower_side)
            .map_err(serde::de::Error::custom)
    }
}

/// Thickness-based epistemic traffic light.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpistemicClass {
    Low,
    Medium,
    High,
}

/// Classify a band thickness: below 0.25 the in-sample distribution is judged
/// trustworthy (low epistemic uncertainty), above 0.5 it is not (high), and
/// the closed interval between the two cutoffs maps to medium.
pub fn epistemic_class(thickness: f64) -> Result<EpistemicClass> {
    if !(thickness.is_finite() && (0.0..=1.0).contains(&thickness)) {
        return Err(Error::InvalidParameter(format!(
            "thickness {thickness} outside [0, 1]"
        )));
    }
    Ok(if thickness < 0.25 {
        EpistemicClass::Low
    } else if thickness <= 0.5 {
        EpistemicClass::Medium
    } else {
        EpistemicClass::High
    })
}

/// Shared scaffolding for the two crisp extractions: walk the band's
/// breakpoints inside the reporting support `[lo, hi]`, apply `g(lower, upper)`
/// on each constancy segment, clamp to 0 below `lo`, and close with a jump to
/// 1 no later than `hi`.
fn crisp_by<F: Fn(f64, f64) -> f64>(
    band: &PredictiveBand,
    lo: f64,
    hi: f64,
    g: F,
) -> Result<StepCdf> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidParameter(format!(
            "support [{lo}, {hi}] is not a finite interval"
        )));
    }
    let bps = band.breakpoints();
    if let (Some(&first), Some(&last)) = (bps.first(), bps.last()) {
        if first < lo || last > hi {
            return Err(Error::SupportTooNarrow { lo, hi });
        }
    }
    let mut pairs = Vec::with_capacity(bps.len() + 2);
    let v0 = g(band.lower.eval(lo, Side::Right), band.upper.eval(lo, Side::Right));
    pairs.push((lo, v0));
    for &b in &bps {
        if b > lo && b < hi {
            pairs.push((b, g(band.lower.eval(b, Side::Right), band.upper.eval(b, Side::Right))));
        }
    }
    // Terminal clamp: the crisp CDF reaches 1 at `hi` whether or not the
    // band's own levels get there; a breakpoint at exactly `hi` is subsumed.
    pairs.push((hi, 1.0));
    StepCdf::from_levels(&pairs)
}

/// Midpoint crisp CDF: `(lower + upper) / 2` inside the support, clamped
/// outside it.
pub fn crisp_midpoint(band: &PredictiveBand, lo: f64, hi: f64) -> Result<StepCdf> {
    crisp_by(band, lo, hi, |l, u| (l + u) / 2.0)
}

/// Which crisp CDF to extract from a band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrispKind {
    Midpoint,
    Minimax,
}

/// Everything a conformal system reports for one test point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Reporting support `[lo, hi]` the crisp CDF was clamped to.
    pub support: (f64, f64),
    pub band: PredictiveBand,
    pub crisp: StepCdf,
    pub thickness: f64,
    pub epistemic: EpistemicClass,
}

impl Prediction {
    pub fn from_band(band: PredictiveBand, lo: f64, hi: f64, kind: CrispKind) -> Result<Self> {
        let crisp = match kind {
            CrispKind::Midpoint => crisp_midpoint(&band, lo, hi)?,
            CrispKind::Minimax => crisp_minimax(&band, lo, hi)?,
        };
        let thickness = band.thickness();
        let epistemic = epistemic_class(thickness)?;
        Ok(Prediction { support: (lo, hi), band, crisp, thickness, epistemic })
    }
}

/// CRPS-minimax crisp CDF: the pointwise minimizer of the worst-case CRPS
/// over all CDFs threaded through the band,
/// `F(z) = upper(z) - upper(z)^2 / 2 + lower(z)^2 / 2`.
/// Monotone because `x - x^2/2` increases on `[0, 1]`. Evaluated in the
/// factored form `u + (l - u)(l + u)/2` so a zero-width band reproduces its
/// bound bit for bit.
pub fn crisp_minimax(band: &PredictiveBand, lo: f64, hi: f64) -> Result<StepCdf> {
    crisp_by(band, lo, hi, |l, u| u + (l - u) * (l + u) / 2.0)
}
