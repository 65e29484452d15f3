//! Error type shared by the numeric modules.
//!
//! File-format and schema errors live in [`crate::io`]; everything here is a
//! domain error: invalid inputs to a fitting routine, degenerate designs, or
//! violated preconditions.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("sample is empty")]
    EmptySample,

    #[error("non-finite {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("weight at index {index} must be positive and finite")]
    BadWeight { index: usize },

    #[error("lengths disagree: {0}")]
    LengthMismatch(String),

    #[error("invalid step CDF: {0}")]
    InvalidCdf(String),

    #[error("invalid predictive band: {0}")]
    InvalidBand(String),

    #[error("covariate {x} is not one of the fitted groups")]
    UnknownGroup { x: f64 },

    #[error("design matrix is rank deficient (or numerically so)")]
    RankDeficient,

    #[error("design has {rows} rows and {cols} columns; need rows >= columns")]
    TooFewRows { rows: usize, cols: usize },

    #[error("leverage of row {index} is 1; studentized residual undefined")]
    LeverageOne { index: usize },

    #[error("k = {k} is out of range; need 1 <= k <= {max} (distinct values)")]
    BadK { k: usize, max: usize },

    #[error("bin {bin} holds no estimation outcomes")]
    EmptyBin { bin: usize },

    #[error("conformity scores decrease along the outcome grid at index {index}; the monotonicity condition fails")]
    NonMonotoneScore { index: usize },

    #[error("support [{lo}, {hi}] does not cover the band breakpoints")]
    SupportTooNarrow { lo: f64, hi: f64 },

    #[error("randomization draw {v} is outside [0, 1]")]
    BadUniform { v: f64 },

    #[error("records and outcomes are misaligned: {0}")]
    Alignment(String),

    #[error("{0}")]
    InvalidParameter(String),
}
