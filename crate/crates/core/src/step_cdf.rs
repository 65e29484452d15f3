//! Step-function CDFs with finitely many jumps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Evaluation side: `Right` gives the CDF value `F(y)`, `Left` the left limit
/// `F(y-)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// A right-continuous step CDF: jump locations (strictly increasing) and the
/// cumulative probability attained at each jump (strictly increasing, in
/// `(0, 1]`, ending at exactly 1).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepCdf {
    jumps: Vec<f64>,
    cum: Vec<f64>,
}

/// Absolute tolerance for "equals one" checks on cumulative probabilities.
pub(crate) const ONE_TOL: f64 = 1e-12;

impl StepCdf {
    pub fn new(jumps: Vec<f64>, mut cum: Vec<f64>) -> Result<Self> {
        if jumps.is_empty() {
            return Err(Error::InvalidCdf("no jumps".into()));
        }
        if jumps.len() != cum.len() {
            return Err(Error::LengthMismatch(format!(
                "{} jumps vs {} cumulative values",
                jumps.len(),
                cum.len()
            )));
        }
        for (i, &j) in jumps.iter().enumerate() {
            if !j.is_finite() {
                return Err(Error::NonFinite { what: "jump", index: i });
            }
            if i > 0 && !(j > jumps[i - 1]) {
                return Err(Error::InvalidCdf(format!(
                    "jumps not strictly increasing at index {i}"
                )));
            }
        }
        for (i, &c) in cum.iter().enumerate() {
            if !c.is_finite() || c <= 0.0 || c > 1.0 + ONE_TOL {
                return Err(Error::InvalidCdf(format!(
                    "cumulative value {c} at index {i} outside (0, 1]"
                )));
            }
            if i > 0 && !(c > cum[i - 1]) {
                return Err(Error::InvalidCdf(format!(
                    "cumulative values not strictly increasing at index {i}"
                )));
            }
        }
        let last = *cum.last().unwrap();
        if (last - 1.0).abs() > ONE_TOL {
            return Err(Error::InvalidCdf(format!(
                "terminal cumulative value is {last}, not 1"
            )));
        }
        *cum.last_mut().unwrap() = 1.0;
        Ok(Self { jumps, cum })
    }

    /// Point mass at `y`.
    pub fn point_mass(y: f64) -> Result<Self> {
        Self::new(vec![y], vec![1.0])
    }

    /// Weighted empirical CDF of `values`. Ties are pooled; weights need not
    /// be normalized.
    pub fn empirical(values: &[f64], weights: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
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
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_unstable_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());

        let mut jumps = Vec::new();
        let mut partial = Vec::new();
        let mut running = 0.0;
        for &i in &order {
            running += weights[i];
            if jumps.last() == Some(&values[i]) {
                *partial.last_mut().unwrap() = running;
            } else {
                jumps.push(values[i]);
                partial.push(running);
            }
        }
        let total = running;
        let cum: Vec<f64> = partial.iter().map(|&s| s / total).collect();
        Self::new(jumps, cum)
    }

    /// Build from `(jump, level)` pairs that may contain plateaus: levels that
    /// do not rise above the running maximum are dropped, so the result keeps
    /// the first location at which each level is attained.
    pub fn from_levels(pairs: &[(f64, f64)]) -> Result<Self> {
        let mut jumps = Vec::new();
        let mut cum: Vec<f64> = Vec::new();
        for &(j, level) in pairs {
            let prev = cum.last().copied().unwrap_or(0.0);
            if level > prev {
                jumps.push(j);
                cum.push(level);
            }
        }
        Self::new(jumps, cum)
    }

    pub fn jumps(&self) -> &[f64] {
        &self.jumps
    }

    pub fn cum(&self) -> &[f64] {
        &self.cum
    }

    /// `F(y)` (side `Right`) or `F(y-)` (side `Left`).
    pub fn eval(&self, y: f64, side: Side) -> f64 {
        let idx = match side {
            Side::Right => self.jumps.partition_point(|&j| j <= y),
            Side::Left => self.jumps.partition_point(|&j| j < y),
        };
        if idx == 0 {
            0.0
        } else {
            self.cum[idx - 1]
        }
    }

    /// Probability mass exactly at `y`.
    pub fn mass_at(&self, y: f64) -> f64 {
        self.eval(y, Side::Right) - self.eval(y, Side::Left)
    }

    /// Smallest jump location with `F >= q`; `q` must lie in `(0, 1]`.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "quantile level {q} outside (0, 1]"
            )));
        }
        let idx = self.cum.partition_point(|&c| c < q);
        Ok(self.jumps[idx.min(self.jumps.len() - 1)])
    }
}

impl<'de> Deserialize<'de> for StepCdf {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        struct Raw {
            jumps: Vec<f64>,
            cum: Vec<f64>,
        }
        let raw = Raw::deserialize(deserializer)?;
        StepCdf::new(raw.jumps, raw.cum).map_err(serde::de::Error::custom)
    }
}
