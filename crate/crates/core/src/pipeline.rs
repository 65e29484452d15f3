//! Experiment orchestration: configuration, fit/predict over a test set,
//! evaluation, and the full simulation-study reproduction.
//!
//! Everything here is deterministic given the configuration: data generation
//! and splitting use seeded generators, test points are processed in input
//! order (parallel workers write into an order-preserving collection), and
//! evaluation draws its PIT randomization from a per-method stream derived
//! from the evaluation seed. Rerunning an experiment with an identical
//! configuration reproduces every output file byte for byte.
//!
//! Conformal IDR and the LSPM are full-conformal procedures and always use
//! the complete training sample. The split specification governs conformal
//! binning only: its estimation part chooses the bins, its calibration part
//! fills them. The `full` split uses the whole training sample for both
//! stages.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::band::{CrispKind, Prediction};
use crate::binning::{assign_bin, cb_band, cb_crisp, kmeans_1d};
use crate::conformal_idr::CidrModel;
use crate::error::{Error, Result};
use crate::eval::{
    crps, pit, pp_curve, pp_grid, reliability_deviation, reliability_thresholds,
    thickness_stats, ConsistencyBand, EvalReport, MethodReport, ThresholdReliability,
    THRESHOLD_LEVELS,
};
use crate::io::{
    write_json, write_jsonl, write_plot_csv, write_sample_csv, write_table_csv, IoResult,
};
use crate::lspm::{lspm_band, lspm_critical_values, lspm_location_critical_values};
use crate::sample::WeightedSample;
use crate::sim::{generate, SimMetadata, SimModel, RNG_ID};
use crate::step_cdf::Side;

/// The three conformal predictive systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cidr,
    Cb,
    Lspm,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Cidr, Method::Cb, Method::Lspm];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Cidr => "cidr",
            Method::Cb => "cb",
            Method::Lspm => "lspm",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Seeds for the independent random streams of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    /// Data generation.
    pub sim: u64,
    /// Estimation/calibration split and k-means restarts.
    pub split: u64,
    /// PIT randomization during evaluation.
    pub eval: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { sim: 1, split: 2, eval: 3 }
    }
}

/// Where the training and test data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Draw from a synthetic model.
    Sim { model: SimModel, n_train: usize, n_test: usize },
    /// Read externally supplied CSV files (schema `x,y[,weight]`).
    Files { train: PathBuf, test: PathBuf },
}

/// How conformal binning divides the training sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSpec {
    /// Use the whole training sample for both estimation and calibration.
    Full,
    /// Disjoint seeded-shuffle parts with the given fractions.
    Fractions { estimation: f64, calibration: f64 },
}

/// Number of bins: fixed, or chosen by cross-validated CRPS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KSelection {
    Fixed(usize),
    Cv,
}

/// Full description of a run; every field has a default and unknown fields
/// are rejected, so a config file is both forgiving and typo-safe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub source: DataSource,
    pub split: SplitSpec,
    pub k: KSelection,
    /// Support-widening constant of conformal IDR.
    pub c: f64,
    /// k-means restarts.
    pub restarts: usize,
    pub seeds: Seeds,
    /// Output directory; `None` defers to the caller (CLI flag or env var).
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            methods: Method::ALL.to_vec(),
            source: DataSource::Sim {
                model: SimModel::Isotonic,
                n_train: 2000,
                n_test: 5000,
            },
            split: SplitSpec::Full,
            k: KSelection::Fixed(10),
            c: 1.0,
            restarts: 10,
            seeds: Seeds::default(),
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// Domain validation (file existence is checked where files are read).
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidParameter("no methods selected".into()));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(Error::InvalidParameter(format!("method {m} listed twice")));
            }
        }
        if let SplitSpec::Fractions { estimation, calibration } = self.split {
            let ok = estimation > 0.0
                && estimation < 1.0
                && calibration > 0.0
                && calibration < 1.0
                && estimation + calibration <= 1.0;
            if !ok {
                return Err(Error::InvalidParameter(format!(
                    "split fractions ({estimation}, {calibration}) must lie in (0, 1) and sum to at most 1"
                )));
            }
        }
        if let KSelection::Fixed(k) = self.k {
            if k == 0 {
                return Err(Error::InvalidParameter("k must be at least 1".into()));
            }
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "widening constant C must be positive and finite, got {}",
                self.c
            )));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidParameter("restarts must be at least 1".into()));
        }
        if let DataSource::Sim { n_train, n_test, .. } = self.source {
            if n_train == 0 || n_test == 0 {
                return Err(Error::InvalidParameter(
                    "simulated sample sizes must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One test point's result for one method. `prediction` is absent exactly
/// when `flag` explains why the method could not produce one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub row: usize,
    pub method: Method,
    pub x: f64,
    pub prediction: Option<Prediction>,
    pub flag: Option<String>,
}

/// Estimation/calibration index sets for conformal binning.
fn split_indices(n: usize, split: SplitSpec, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    match split {
        SplitSpec::Full => {
            let all: Vec<usize> = (0..n).collect();
            Ok((all.clone(), all))
        }
        SplitSpec::Fractions { estimation, calibration } => {
            let mut order: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            // Fisher-Yates, driven by the split stream.
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
            let n_est = ((estimation * n as f64).ceil() as usize).clamp(1, n);
            let n_cal = ((calibration * n as f64).ceil() as usize).clamp(1, n - n_est.min(n - 1));
            if n_est + n_cal > n {
                return Err(Error::InvalidParameter(format!(
                    "split of {n} points leaves no room: {n_est} estimation + {n_cal} calibration"
                )));
            }
            let est = order[..n_est].to_vec();
            let cal = order[n_est..n_est + n_cal].to_vec();
            Ok((est, cal))
        }
    }
}

fn subsample(sample: &WeightedSample, idx: &[usize]) -> Result<WeightedSample> {
    let pts = sample.points();
    WeightedSample::new(idx.iter().map(|&i| pts[i]).collect())
}

/// Mean CRPS of the bin-empirical crisp CDF under 5-fold cross-validation,
/// for each candidate number of bins; returns the arg-min (ties to the
/// smaller k). Candidates are `1..=max_k` capped at the number of distinct
/// covariates.
pub fn select_k_by_cv(sample: &WeightedSample, max_k: usize, restarts: usize, seed: u64) -> Result<usize> {
    let pts = sample.points();
    let n = pts.len();
    if n < 10 {
        return Err(Error::InvalidParameter(format!(
            "cross-validated k needs at least 10 points, got {n}"
        )));
    }
    let mut distinct: Vec<f64> = pts.iter().map(|p| p.x).collect();
    distinct.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    let cap = max_k.min(distinct.len());

    // Deterministic shuffled folds.
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }

    let mut best: Option<(f64, usize)> = None;
    for k in 1..=cap {
        let mut total = 0.0;
        let mut count = 0usize;
        for fold in 0..5 {
            let held: Vec<usize> = order
                .iter()
                .enumerate()
                .filter(|(pos, _)| pos % 5 == fold)
                .map(|(_, &i)| i)
                .collect();
            let kept: Vec<usize> = order
                .iter()
                .enumerate()
                .filter(|(pos, _)| pos % 5 != fold)
                .map(|(_, &i)| i)
                .collect();
            if held.is_empty() || kept.is_empty() {
                continue;
            }
            let train = subsample(sample, &kept)?;
            let xs: Vec<f64> = train.points().iter().map(|p| p.x).collect();
            let mut fold_distinct = xs.clone();
            fold_distinct.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            fold_distinct.dedup();
            let model = kmeans_1d(&xs, k.min(fold_distinct.len()), restarts, seed)?;
            let bins = model.bins();
            let mut by_bin: Vec<Vec<f64>> = vec![Vec::new(); bins];
            for p in train.points() {
                by_bin[assign_bin(&model, p.x)?].push(p.y);
            }
            for &i in &held {
                let p = pts[i];
                let mut b = assign_bin(&model, p.x)?;
                if by_bin[b].is_empty() {
                    b = nearest_populated(&by_bin, b)
                        .ok_or(Error::EmptyBin { bin: b })?;
                }
                let crisp = cb_crisp(&by_bin[b])?;
                total += crps(&crisp, p.y)?;
                count += 1;
            }
        }
        if count == 0 {
            continue;
        }
        let mean = total / count as f64;
        let better = match best {
            None => true,
            Some((bm, _)) => mean < bm,
        };
        if better {
            best = Some((mean, k));
        }
    }
    best.map(|(_, k)| k)
        .ok_or_else(|| Error::InvalidParameter("cross-validation produced no folds".into()))
}

fn nearest_populated(by_bin: &[Vec<f64>], b: usize) -> Option<usize> {
    (0..by_bin.len())
        .filter(|&i| !by_bin[i].is_empty())
        .min_by_key(|&i| (i.abs_diff(b), i))
}

fn fit_predict_cidr(
    train: &WeightedSample,
    test_xs: &[f64],
    c: f64,
) -> Result<Vec<PredictionRecord>> {
    let model = CidrModel::new(train);
    let (lo, hi) = model.support(c);
    test_xs
        .par_iter()
        .enumerate()
        .map_init(crate::conformal_idr::CidrScratch::default, |scratch, (row, &x)| {
            let band = model.band_with_scratch(x, c, scratch)?;
            let prediction = Prediction::from_band(band, lo, hi, CrispKind::Minimax)?;
            Ok(PredictionRecord {
                row,
                method: Method::Cidr,
                x,
                prediction: Some(prediction),
                flag: None,
            })
        })
        .collect()
}

fn fit_predict_lspm(train: &WeightedSample, test_xs: &[f64]) -> Result<Vec<PredictionRecord>> {
    let pts = train.points();
    let train_y: Vec<f64> = pts.iter().map(|p| p.y).collect();
    let constant_x = pts.iter().all(|p| p.x == pts[0].x);
    let train_x: Vec<Vec<f64>> = if constant_x {
        // A constant covariate makes the slope column collinear with the
        // intercept; fall back to the location (intercept-only) machine.
        vec![Vec::new(); pts.len()]
    } else {
        pts.iter().map(|p| vec![p.x]).collect()
    };

    let pad_base = train.max_outcome() - train.min_outcome();
    let pad = 0.01 * pad_base.max(1.0);

    test_xs
        .par_iter()
        .enumerate()
        .map(|(row, &x)| {
            let critical = if constant_x {
                lspm_location_critical_values(&train_y)
            } else {
                lspm_critical_values(&train_x, &train_y, &[x])
            };
            let critical = match critical {
                Ok(c) => c,
                Err(e @ Error::LeverageOne { .. }) => {
                    return Ok(PredictionRecord {
                        row,
                        method: Method::Lspm,
                        x,
                        prediction: None,
                        flag: Some(e.to_string()),
                    });
                }
                Err(e) => return Err(e),
            };
            let band = lspm_band(&critical)?;
            let finite = critical.iter().copied().filter(|v| v.is_finite());
            let lo = finite
                .clone()
                .fold(train.min_outcome(), f64::min) - pad;
            let hi = finite.fold(train.max_outcome(), f64::max) + pad;
            let prediction = Prediction::from_band(band, lo, hi, CrispKind::Midpoint)?;
            Ok(PredictionRecord {
                row,
                method: Method::Lspm,
                x,
                prediction: Some(prediction),
                flag: None,
            })
        })
        .collect()
}

fn fit_predict_cb(
    train: &WeightedSample,
    test_xs: &[f64],
    config: &ExperimentConfig,
) -> Result<Vec<PredictionRecord>> {
    let n = train.len();
    let (est_idx, cal_idx) = split_indices(n, config.split, config.seeds.split)?;
    let est = subsample(train, &est_idx)?;
    let cal = subsample(train, &cal_idx)?;

    let est_xs: Vec<f64> = est.points().iter().map(|p| p.x).collect();
    let k = match config.k {
        KSelection::Fixed(k) => k,
        KSelection::Cv => select_k_by_cv(&est, 15, config.restarts, config.seeds.split)?,
    };
    let model = kmeans_1d(&est_xs, k, config.restarts, config.seeds.split)?;
    let bins = model.bins();

    let mut by_bin: Vec<Vec<f64>> = vec![Vec::new(); bins];
    for p in cal.points() {
        by_bin[assign_bin(&model, p.x)?].push(p.y);
    }

    // Precompute one prediction per populated bin; test points share them.
    let mut per_bin: Vec<Option<Prediction>> = Vec::with_capacity(bins);
    for outcomes in &by_bin {
        if outcomes.is_empty() {
            per_bin.push(None);
            continue;
        }
        let band = cb_band(outcomes)?;
        let crisp = cb_crisp(outcomes)?;
        let thickness = band.thickness();
        let epistemic = crate::band::epistemic_class(thickness)?;
        let min = outcomes.iter().copied().fold(f64::INFINITY, f64::min);
        let max = outcomes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = 0.01 * (max - min).max(1.0);
        per_bin.push(Some(Prediction {
            support: (min - pad, max + pad),
            band,
            crisp,
            thickness,
            epistemic,
        }));
    }

    let mut records = Vec::with_capacity(test_xs.len());
    for (row, &x) in test_xs.iter().enumerate() {
        let b = assign_bin(&model, x)?;
        let (bin, flag) = if per_bin[b].is_some() {
            (b, None)
        } else {
            match nearest_populated(&by_bin, b) {
                Some(nb) => (
                    nb,
                    Some(format!(
                        "bin {b} holds no calibration outcomes; used bin {nb}"
                    )),
                ),
                None => return Err(Error::EmptyBin { bin: b }),
            }
        };
        records.push(PredictionRecord {
            row,
            method: Method::Cb,
            x,
            prediction: per_bin[bin].clone(),
            flag,
        });
    }
    Ok(records)
}

/// Fit every configured method on `train` and predict at `test_xs`.
/// Records are ordered method-major, then by test row.
pub fn fit_predict(
    train: &WeightedSample,
    test_xs: &[f64],
    config: &ExperimentConfig,
) -> Result<Vec<PredictionRecord>> {
    config.validate()?;
    if let Some(bad) = test_xs.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { what: "covariate", index: bad });
    }
    let mut records = Vec::with_capacity(config.methods.len() * test_xs.len());
    for &method in &config.methods {
        let batch = match method {
            Method::Cidr => fit_predict_cidr(train, test_xs, config.c)?,
            Method::Lspm => fit_predict_lspm(train, test_xs)?,
            Method::Cb => fit_predict_cb(train, test_xs, config)?,
        };
        records.extend(batch);
    }
    Ok(records)
}

/// Derive the per-method PIT stream from the evaluation seed (splitmix-style
/// finalizer, so adjacent seeds do not yield adjacent streams).
fn pit_stream_seed(eval_seed: u64, method: Method) -> u64 {
    let idx = Method::ALL.iter().position(|m| *m == method).unwrap() as u64;
    let mut z = eval_seed ^ (idx.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Score prediction records against the test outcomes.
///
/// Every method present must carry exactly one record per test row (flagged
/// records count as present but are excluded from the statistics).
pub fn evaluate(
    records: &[PredictionRecord],
    test: &WeightedSample,
    eval_seed: u64,
) -> Result<EvalReport> {
    let pts = test.points();
    let n = pts.len();
    let outcomes: Vec<f64> = pts.iter().map(|p| p.y).collect();
    let thresholds = reliability_thresholds(&outcomes)?;
    let grid = pp_grid();

    let mut methods = Vec::new();
    for method in Method::ALL {
        let mine: Vec<&PredictionRecord> =
            records.iter().filter(|r| r.method == method).collect();
        if mine.is_empty() {
            continue;
        }
        let mut by_row: Vec<Option<&PredictionRecord>> = vec![None; n];
        for &r in &mine {
            if r.row >= n {
                return Err(Error::Alignment(format!(
                    "method {method}: record row {} but the test set has {n} rows",
                    r.row
                )));
            }
            if by_row[r.row].replace(r).is_some() {
                return Err(Error::Alignment(format!(
                    "method {method}: duplicate record for row {}",
                    r.row
                )));
            }
        }
        if let Some(missing) = by_row.iter().position(|r| r.is_none()) {
            return Err(Error::Alignment(format!(
                "method {method}: no record for row {missing}"
            )));
        }
        for (row, r) in by_row.iter().enumerate() {
            let r = r.unwrap();
            if r.x != pts[row].x {
                return Err(Error::Alignment(format!(
                    "method {method}, row {row}: record covariate {} but test covariate {}",
                    r.x, pts[row].x
                )));
            }
        }

        let mut rng = ChaCha12Rng::seed_from_u64(pit_stream_seed(eval_seed, method));
        let mut crps_sum = 0.0;
        let mut included = 0usize;
        let mut flagged = 0usize;
        let mut pits = Vec::with_capacity(n);
        let mut thicknesses = Vec::with_capacity(n);
        let mut probs: Vec<Vec<f64>> = vec![Vec::with_capacity(n); thresholds.len()];
        let mut events: Vec<Vec<bool>> = vec![Vec::with_capacity(n); thresholds.len()];
        for (row, r) in by_row.iter().enumerate() {
            // One draw per row, taken unconditionally so the stream does not
            // shift when a record is flagged.
            let v: f64 = rng.random();
            let record = r.unwrap();
            let Some(pred) = &record.prediction else {
                flagged += 1;
                continue;
            };
            let y = pts[row].y;
            crps_sum += crps(&pred.crisp, y)?;
            included += 1;
            pits.push(pit(&pred.crisp, y, v)?);
            thicknesses.push(pred.thickness);
            for (ti, &t) in thresholds.iter().enumerate() {
                probs[ti].push(pred.crisp.eval(t, Side::Right));
                events[ti].push(y <= t);
            }
        }
        if included == 0 {
            return Err(Error::Alignment(format!(
                "method {method}: every record is flagged; nothing to evaluate"
            )));
        }

        let mut reliability = Vec::with_capacity(thresholds.len());
        for (ti, &threshold) in thresholds.iter().enumerate() {
            let curve = crate::eval::corp_reliability(&probs[ti], &events[ti])?;
            let max_deviation = reliability_deviation(&curve);
            reliability.push(ThresholdReliability {
                level: THRESHOLD_LEVELS[ti],
                threshold,
                curve,
                max_deviation,
            });
        }

        methods.push(MethodReport {
            method: method.tag().to_string(),
            mean_crps: crps_sum / included as f64,
            pp_curve: pp_curve(&pits, &grid, 0.9, ConsistencyBand::PointwiseBinomial)?,
            pit_sample: pits,
            reliability,
            thickness: thickness_stats(&thicknesses)?,
            flagged,
        });
    }
    if methods.is_empty() {
        return Err(Error::Alignment("no records for any method".into()));
    }
    Ok(EvalReport { methods })
}

/// The simulation-study training grid.
pub const EXPERIMENT_SIZES: [usize; 4] = [100, 500, 1000, 2000];

/// Test-set size of the simulation study.
pub const DEFAULT_N_TEST: usize = 5000;

/// One row of the cross-bundle comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: SimModel,
    pub n_train: usize,
    pub method: String,
    pub mean_crps: f64,
    pub mean_thickness: Option<f64>,
}

/// Wrapper serialized as `bundle.json` inside each bundle directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub config: ExperimentConfig,
    pub model: SimModel,
    pub n_train: usize,
    pub n_test: usize,
    pub train_seed: u64,
    pub test_seed: u64,
    pub eval_seed: u64,
    pub rng: String,
    pub version: String,
}

/// Write `report.json` plus the per-method plot tables (p-p curve,
/// reliability, thickness histogram) and the CRPS summary into `dir`.
pub fn write_reports(dir: &Path, report: &EvalReport) -> IoResult<()> {
    write_json(&dir.join("report.json"), report)?;
    for m in &report.methods {
        let pp_rows: Vec<Vec<f64>> = m
            .pp_curve
            .iter()
            .map(|p| vec![p.alpha, p.ecdf, p.band_lo, p.band_hi])
            .collect();
        write_plot_csv(
            &dir.join(format!("pp_{}.csv", m.method)),
            &["alpha", "ecdf", "band_lo", "band_hi"],
            &pp_rows,
        )?;
        let mut rel_rows = Vec::new();
        for t in &m.reliability {
            for p in &t.curve {
                rel_rows.push(vec![t.level, t.threshold, p.forecast, p.recalibrated]);
            }
        }
        write_plot_csv(
            &dir.join(format!("reliability_{}.csv", m.method)),
            &["level", "threshold", "forecast", "recalibrated"],
            &rel_rows,
        )?;
        let hist_rows: Vec<Vec<f64>> = m
            .thickness
            .histogram
            .iter()
            .map(|b| vec![b.lo, b.hi, b.count as f64])
            .collect();
        write_plot_csv(
            &dir.join(format!("thickness_{}.csv", m.method)),
            &["lo", "hi", "count"],
            &hist_rows,
        )?;
    }
    let crps_rows: Vec<Vec<String>> = report
        .methods
        .iter()
        .map(|m| vec![m.method.clone(), m.mean_crps.to_string()])
        .collect();
    write_table_csv(&dir.join("crps.csv"), &["method", "mean_crps"], &crps_rows)?;
    Ok(())
}

/// Run the full simulation study: for each model and each training size,
/// simulate, fit, evaluate, and write one bundle directory; then write the
/// cross-bundle `comparison.csv`. Returns the comparison rows.
pub fn experiment(
    config: &ExperimentConfig,
    sizes: &[usize],
    n_test: usize,
    out_root: &Path,
) -> IoResult<Vec<ComparisonRow>> {
    config.validate()?;
    if sizes.is_empty() || n_test == 0 {
        return Err(Error::InvalidParameter("experiment grid is empty".into()).into());
    }
    std::fs::create_dir_all(out_root)?;

    let mut comparison = Vec::new();
    for (mi, &model) in [SimModel::Isotonic, SimModel::LessIsotonic].iter().enumerate() {
        for (si, &n_train) in sizes.iter().enumerate() {
            let bundle_index = (mi * sizes.len() + si) as u64;
            let train_seed = config.seeds.sim.wrapping_add(2 * bundle_index);
            let test_seed = config.seeds.sim.wrapping_add(2 * bundle_index + 1);
            let eval_seed = config.seeds.eval.wrapping_add(bundle_index);

            let dir = out_root.join(format!("{}_n{}", model.tag(), n_train));
            std::fs::create_dir_all(&dir)?;

            let train = generate(model, n_train, train_seed)?;
            let test = generate(model, n_test, test_seed)?;
            write_sample_csv(&dir.join("train.csv"), &train)?;
            write_json(
                &dir.join("train.meta.json"),
                &SimMetadata::new(model, n_train, train_seed),
            )?;
            write_sample_csv(&dir.join("test.csv"), &test)?;
            write_json(
                &dir.join("test.meta.json"),
                &SimMetadata::new(model, n_test, test_seed),
            )?;

            let test_xs: Vec<f64> = test.points().iter().map(|p| p.x).collect();
            let records = fit_predict(&train, &test_xs, config)?;
            write_jsonl(&dir.join("records.jsonl"), &records)?;

            let report = evaluate(&records, &test, eval_seed)?;
            write_reports(&dir, &report)?;

            write_json(
                &dir.join("bundle.json"),
                &BundleManifest {
                    config: config.clone(),
                    model,
                    n_train,
                    n_test,
                    train_seed,
                    test_seed,
                    eval_seed,
                    rng: RNG_ID.to_string(),
                    version: env!("CARGO_PKG_VERSION").to_string(),
                },
            )?;

            for m in &report.methods {
                comparison.push(ComparisonRow {
                    model,
                    n_train,
                    method: m.method.clone(),
                    mean_crps: m.mean_crps,
                    mean_thickness: Some(m.thickness.mean),
                });
            }
            if model == SimModel::Isotonic {
                let ideal = crate::sim::ideal_crps_isotonic(&test)?;
                comparison.push(ComparisonRow {
                    model,
                    n_train,
                    method: "ideal".to_string(),
                    mean_crps: ideal,
                    mean_thickness: None,
                });
            }
        }
    }

    let rows: Vec<Vec<String>> = comparison
        .iter()
        .map(|r| {
            vec![
                r.model.tag().to_string(),
                r.n_train.to_string(),
                r.method.clone(),
                r.mean_crps.to_string(),
                r.mean_thickness.map(|t| t.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    write_table_csv(
        &out_root.join("comparison.csv"),
        &["model", "n_train", "method", "mean_crps", "mean_thickness"],
        &rows,
    )?;
    Ok(comparison)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            k: KSelection::Fixed(3),
            ..ExperimentConfig::default()
        }
    }

    fn toy_train() -> WeightedSample {
        crate::sim::gen_isotonic(60, 5).unwrap()
    }

    #[test]
    fn config_validation_catches_bad_fields() {
        let mut c = ExperimentConfig::default();
        assert!(c.validate().is_ok());
        c.methods = vec![];
        assert!(c.validate().is_err());
        c.methods = vec![Method::Cidr, Method::Cidr];
        assert!(c.validate().is_err());
        c.methods = vec![Method::Cidr];
        c.split = SplitSpec::Fractions { estimation: 0.7, calibration: 0.7 };
        assert!(c.validate().is_err());
        c.split = SplitSpec::Full;
        c.c = 0.0;
        assert!(c.validate().is_err());
        c.c = 1.0;
        c.k = KSelection::Fixed(0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_round_trip_and_unknown_field_rejection() {
        let c = ExperimentConfig::default();
        let text = serde_json::to_string_pretty(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(c, back);
        // Unknown fields are rejected; empty object takes all defaults.
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"methods":["cidr"],"typo":1}"#).is_err());
        let d: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(d, ExperimentConfig::default());
    }

    #[test]
    fn split_full_reuses_everything_and_fractions_are_disjoint() {
        let (est, cal) = split_indices(10, SplitSpec::Full, 1).unwrap();
        assert_eq!(est, (0..10).collect::<Vec<_>>());
        assert_eq!(est, cal);

        let spec = SplitSpec::Fractions { estimation: 0.5, calibration: 0.5 };
        let (est, cal) = split_indices(10, spec, 1).unwrap();
        assert_eq!(est.len(), 5);
        assert_eq!(cal.len(), 5);
        let mut all: Vec<usize> = est.iter().chain(&cal).copied().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 10, "estimation and calibration overlap");
        // Deterministic per seed.
        let again = split_indices(10, spec, 1).unwrap();
        assert_eq!((est, cal), again);
    }

    #[test]
    fn records_cover_methods_by_row_in_order() {
        let train = toy_train();
        let test_xs = [0.5, 4.0, 9.5];
        let records = fit_predict(&train, &test_xs, &tiny_config()).unwrap();
        assert_eq!(records.len(), 3 * 3);
        for batch in records.chunks(3) {
            assert_eq!(
                batch.iter().map(|r| r.row).collect::<Vec<_>>(),
                vec![0, 1, 2]
            );
        }
        // CLI plumbing must not alter module results: spot-check each method
        // against a direct call.
        let cidr = records.iter().find(|r| r.method == Method::Cidr).unwrap();
        let direct =
            crate::conformal_idr::cidr_predict(&train, 0.5, 1.0, CrispKind::Minimax).unwrap();
        assert_eq!(cidr.prediction.as_ref().unwrap().band, direct.band);

        let lspm = records.iter().find(|r| r.method == Method::Lspm).unwrap();
        let train_x: Vec<Vec<f64>> =
            train.points().iter().map(|p| vec![p.x]).collect();
        let train_y: Vec<f64> = train.points().iter().map(|p| p.y).collect();
        let critical = lspm_critical_values(&train_x, &train_y, &[0.5]).unwrap();
        let band = lspm_band(&critical).unwrap();
        assert_eq!(lspm.prediction.as_ref().unwrap().band, band);
    }

    #[test]
    fn lspm_on_constant_covariates_uses_the_location_machine() {
        let train = WeightedSample::from_xy(&[(2.0, 1.0), (2.0, 3.0), (2.0, 2.0)]).unwrap();
        let records = fit_predict_lspm(&train, &[2.0, 7.0]).unwrap();
        let pred = records[0].prediction.as_ref().unwrap();
        // Location criticals are the sorted outcomes.
        assert_eq!(pred.band.breakpoints(), vec![1.0, 2.0, 3.0]);
        assert_abs_diff_eq!(pred.thickness, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn cb_empty_bins_fall_back_with_a_flag() {
        // Calibration part misses the right cluster: force with a split that
        // puts the lone high-x point in estimation only.
        let train = WeightedSample::from_xy(&[
            (0.0, 1.0),
            (0.1, 2.0),
            (0.2, 3.0),
            (10.0, 9.0),
        ])
        .unwrap();
        // With k = 2 on the full sample every bin is populated; check the
        // nearest-populated fallback machinery directly instead.
        let by_bin = vec![vec![1.0, 2.0], vec![], vec![5.0]];
        assert_eq!(nearest_populated(&by_bin, 1), Some(0));
        assert_eq!(nearest_populated(&by_bin, 2), Some(2));
        let config = ExperimentConfig {
            k: KSelection::Fixed(2),
            ..ExperimentConfig::default()
        };
        let records = fit_predict_cb(&train, &[0.05, 10.0], &config).unwrap();
        assert!(records.iter().all(|r| r.prediction.is_some() && r.flag.is_none()));
    }

    #[test]
    fn evaluate_rejects_misaligned_records() {
        let train = toy_train();
        let test = crate::sim::gen_isotonic(8, 6).unwrap();
        let test_xs: Vec<f64> = test.points().iter().map(|p| p.x).collect();
        let config = tiny_config();
        let mut records = fit_predict(&train, &test_xs, &config).unwrap();
        assert!(evaluate(&records, &test, 1).is_ok());

        let dropped = records.remove(0);
        let err = evaluate(&records, &test, 1).unwrap_err();
        assert!(matches!(err, Error::Alignment(_)), "{err}");
        assert!(err.to_string().contains("row 0"), "{err}");

        records.insert(0, dropped.clone());
        records.push(dropped);
        let err = evaluate(&records, &test, 1).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn evaluate_scores_point_mass_forecasts_at_zero() {
        // Hand-built records: each crisp is a point mass at the true
        // outcome, so the mean CRPS is exactly zero.
        let test = WeightedSample::from_xy(&[(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)]).unwrap();
        let records: Vec<PredictionRecord> = test
            .points()
            .iter()
            .enumerate()
            .map(|(row, p)| {
                let band = crate::band::PredictiveBand::from_bounds(
                    crate::band::StepFn::new(0.0, vec![p.y], vec![1.0]).unwrap(),
                    crate::band::StepFn::new(0.0, vec![p.y], vec![1.0]).unwrap(),
                )
                .unwrap();
                PredictionRecord {
                    row,
                    method: Method::Cidr,
                    x: p.x,
                    prediction: Some(Prediction {
                        support: (p.y - 1.0, p.y + 1.0),
                        band,
                        crisp: crate::StepCdf::point_mass(p.y).unwrap(),
                        thickness: 0.0,
                        epistemic: crate::band::EpistemicClass::Low,
                    }),
                    flag: None,
                }
            })
            .collect();
        let report = evaluate(&records, &test, 9).unwrap();
        assert_eq!(report.methods.len(), 1);
        assert_eq!(report.methods[0].mean_crps, 0.0);
        assert_eq!(report.methods[0].flagged, 0);
    }

    #[test]
    fn evaluate_matches_direct_crps_calls() {
        let train = toy_train();
        let test = crate::sim::gen_isotonic(12, 44).unwrap();
        let test_xs: Vec<f64> = test.points().iter().map(|p| p.x).collect();
        let config = ExperimentConfig {
            methods: vec![Method::Cidr],
            ..tiny_config()
        };
        let records = fit_predict(&train, &test_xs, &config).unwrap();
        let report = evaluate(&records, &test, 3).unwrap();
        let mut sum = 0.0;
        for (r, p) in records.iter().zip(test.points()) {
            sum += crps(&r.prediction.as_ref().unwrap().crisp, p.y).unwrap();
        }
        assert_abs_diff_eq!(
            report.methods[0].mean_crps,
            sum / test.len() as f64,
            epsilon = 1e-15
        );
    }

    #[test]
    fn pit_streams_differ_by_method_but_are_stable() {
        let a = pit_stream_seed(7, Method::Cidr);
        let b = pit_stream_seed(7, Method::Lspm);
        assert_ne!(a, b);
        assert_eq!(a, pit_stream_seed(7, Method::Cidr));
    }

    #[test]
    fn cv_recovers_a_clear_two_cluster_structure() {
        // Two covariate clusters with constant outcomes per cluster: k = 2
        // reaches CRPS zero, k = 1 mixes the levels, and larger k ties at
        // zero so the smaller k wins.
        let mut pts = Vec::new();
        for i in 0..30 {
            let t = i as f64 * 0.01;
            pts.push((t, 0.0));
            pts.push((5.0 + t, 50.0));
        }
        let sample = WeightedSample::from_xy(&pts).unwrap();
        let k = select_k_by_cv(&sample, 6, 8, 3).unwrap();
        assert_eq!(k, 2);
    }

    #[test]
    fn experiment_writes_a_complete_deterministic_bundle_tree() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("out");
        let config = ExperimentConfig {
            k: KSelection::Fixed(2),
            ..ExperimentConfig::default()
        };
        let rows = experiment(&config, &[30], 40, &root).unwrap();
        // 2 models x 1 size x 3 methods + 1 ideal row.
        assert_eq!(rows.len(), 7);
        for model in ["isotonic", "less_isotonic"] {
            let bundle = root.join(format!("{model}_n30"));
            for f in [
                "train.csv",
                "train.meta.json",
                "test.csv",
                "test.meta.json",
                "records.jsonl",
                "report.json",
                "bundle.json",
                "crps.csv",
                "pp_cidr.csv",
                "reliability_cb.csv",
                "thickness_lspm.csv",
            ] {
                assert!(bundle.join(f).exists(), "{model}: missing {f}");
            }
        }
        assert!(root.join("comparison.csv").exists());

        // Byte-identical rerun.
        let mut digest1 = Vec::new();
        collect_bytes(&root, &mut digest1);
        let rows2 = experiment(&config, &[30], 40, &root).unwrap();
        assert_eq!(rows, rows2);
        let mut digest2 = Vec::new();
        collect_bytes(&root, &mut digest2);
        assert_eq!(digest1, digest2);
    }

    fn collect_bytes(root: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        let mut entries: Vec<_> = std::fs::read_dir(root).unwrap().map(|e| e.unwrap()).collect();
        entries.sort_by_key(|e| e.path());
        for e in entries {
            let p = e.path();
            if p.is_dir() {
                collect_bytes(&p, out);
            } else {
                out.push((p.clone(), std::fs::read(&p).unwrap()));
            }
        }
    }

    #[test]
    fn records_serialize_and_round_trip_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let train = toy_train();
        let records = fit_predict(&train, &[1.0, 8.0], &tiny_config()).unwrap();
        crate::io::write_jsonl(&path, &records).unwrap();
        let back: Vec<PredictionRecord> = crate::io::read_jsonl(&path).unwrap();
        assert_eq!(records, back);
    }
}
