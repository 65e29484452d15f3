//! Weighted regression samples with a scalar covariate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observation: covariate, outcome, and a positive weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub x: f64,
    pub y: f64,
    pub weight: f64,
}

/// A finite weighted sample of `(x, y)` pairs.
///
/// Invariants (enforced at construction): nonempty, all values finite, all
/// weights strictly positive. Order is preserved as given.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct WeightedSample {
    points: Vec<SamplePoint>,
}

impl WeightedSample {
    pub fn new(points: Vec<SamplePoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptySample);
        }
        for (index, p) in points.iter().enumerate() {
            if !p.x.is_finite() {
                return Err(Error::NonFinite { what: "covariate", index });
            }
            if !p.y.is_finite() {
                return Err(Error::NonFinite { what: "outcome", index });
            }
            if !(p.weight.is_finite() && p.weight > 0.0) {
                return Err(Error::BadWeight { index });
            }
        }
        Ok(Self { points })
    }

    /// Unit-weight sample from `(x, y)` pairs.
    pub fn from_xy(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&(x, y)| SamplePoint { x, y, weight: 1.0 })
                .collect(),
        )
    }

    pub fn points(&self) -> &[SamplePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.points.iter().map(|p| p.weight).sum()
    }

    pub fn min_outcome(&self) -> f64 {
        self.points.iter().map(|p| p.y).fold(f64::INFINITY, f64::min)
    }

    pub fn max_outcome(&self) -> f64 {
        self.points.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max)
    }
}

impl<'de> Deserialize<'de> for WeightedSample {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let points = Vec::<SamplePoint>::deserialize(deserializer)?;
        WeightedSample::new(points).map_err(serde::de::Error::custom)
    }
}
