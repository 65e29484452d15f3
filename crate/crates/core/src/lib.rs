//! Conformal predictive systems for scalar regression.
//!
//! A conformal predictive system turns a training sample into a *band* of
//! nondecreasing functions `(lower, upper)` around the outcome axis: every
//! function threaded through the band is a predictive CDF, and exchangeability
//! of the data alone guarantees finite-sample probabilistic calibration for
//! any of them. This crate implements three such systems plus the machinery
//! to extract single ("crisp") predictive CDFs from a band and to audit
//! calibration empirically:
//!
//! - [`conformal_idr`]: the band spanned by isotonic distributional regression
//!   on the augmented sample (two monotone-regression runs per test point);
//! - [`binning`]: auto-calibrated forecasts obtained by pooling outcomes over
//!   covariate bins (k-means or isotonic-mean level sets);
//! - [`lspm`]: the studentized least-squares prediction machine, with
//!   closed-form critical values;
//! - [`band`]: step-function bands, thickness, crisp extraction, and the
//!   thickness-based epistemic traffic light;
//! - [`eval`]: CRPS, randomized PIT, p-p curves with consistency bands, CORP
//!   reliability diagrams, and exact in-sample calibration checks;
//! - [`sim`]: the two synthetic data models used by the evaluation suite.

pub mod band;
pub mod binning;
pub mod conformal_idr;
pub mod error;
pub mod eval;
pub mod io;
pub mod isotonic;
pub mod lspm;
pub mod pipeline;
pub mod sample;
pub mod sim;
pub mod step_cdf;

pub use band::{crisp_midpoint, crisp_minimax, epistemic_class, EpistemicClass, PredictiveBand, StepFn};
pub use error::{Error, Result};
pub use sample::WeightedSample;
pub use step_cdf::{Side, StepCdf};
