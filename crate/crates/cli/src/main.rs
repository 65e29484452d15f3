//! `cps`: command-line driver for the conformal predictive systems library.
//!
//! All numeric work routes through `cps_core`; this binary only parses
//! arguments, assembles the configuration (JSON file, then flag overrides),
//! moves bytes, and maps errors to exit codes:
//!
//! * 0 — success
//! * 2 — usage or configuration error
//! * 3 — data error (unreadable or malformed files)
//! * 4 — numeric failure inside the library

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use cps_core::error::Error as DomainError;
use cps_core::io::{
    read_jsonl, read_sample_csv, write_json, write_jsonl, write_sample_csv, IoError,
};
use cps_core::pipeline::{
    evaluate, experiment, fit_predict, write_reports, DataSource, ExperimentConfig, KSelection,
    Method, PredictionRecord, SplitSpec, DEFAULT_N_TEST, EXPERIMENT_SIZES,
};
use cps_core::sim::{generate, SimMetadata, SimModel};

#[derive(Parser)]
#[command(
    name = "cps",
    version,
    about = "Conformal predictive systems: simulate, fit-predict, evaluate, experiment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw training and test samples from a synthetic model.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Fit the configured methods on a training CSV and predict at the test
    /// covariates; writes records.jsonl.
    FitPredict {
        /// Training sample CSV (columns x,y[,weight]).
        train: PathBuf,
        /// Test sample CSV; only its covariates are used here.
        test: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score prediction records against test outcomes; writes report.json
    /// and plot tables.
    Evaluate {
        /// records.jsonl from fit-predict.
        records: PathBuf,
        /// Test sample CSV with the realized outcomes.
        test: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Reproduce the simulation study: both models over a grid of training
    /// sizes, one bundle directory per cell, plus comparison.csv.
    Experiment {
        /// Training sizes (default: the full study grid).
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        /// Test points per bundle.
        #[arg(long)]
        experiment_n_test: Option<usize>,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

/// Flag overrides for every configuration field. Anything left unset keeps
/// the value from `--config` (or the default).
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated subset of cidr,cb,lspm.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Synthetic model: isotonic or less_isotonic.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    /// Use an external training CSV instead of simulation (with --test-file).
    #[arg(long)]
    train_file: Option<PathBuf>,
    #[arg(long)]
    test_file: Option<PathBuf>,
    /// Binning split: `full`, or `EST,CAL` fractions (e.g. 0.5,0.5).
    #[arg(long)]
    split: Option<String>,
    /// Number of bins, or `cv` for cross-validated selection.
    #[arg(long)]
    k: Option<String>,
    /// Conformal-IDR widening constant.
    #[arg(long)]
    c: Option<f64>,
    /// k-means restarts.
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    seed_sim: Option<u64>,
    #[arg(long)]
    seed_split: Option<u64>,
    #[arg(long)]
    seed_eval: Option<u64>,
    /// Output directory (default: $CPS_OUT_DIR, then the working directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Io(IoError),
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Io(e)
    }
}

impl From<DomainError> for CliError {
    fn from(e: DomainError) -> Self {
        CliError::Io(IoError::Domain(e))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

fn exit_code(e: &CliError) -> i32 {
    match e {
        CliError::Usage(_) => 2,
        CliError::Io(IoError::Domain(d)) => match d {
            // Configuration-shaped domain errors are usage errors.
            DomainError::InvalidParameter(_) | DomainError::BadK { .. } => 2,
            _ => 4,
        },
        CliError::Io(_) => 3,
    }
}

fn parse_method(s: &str) -> Result<Method, CliError> {
    match s {
        "cidr" => Ok(Method::Cidr),
        "cb" => Ok(Method::Cb),
        "lspm" => Ok(Method::Lspm),
        other => Err(CliError::Usage(format!(
            "unknown method `{other}` (expected cidr, cb, or lspm)"
        ))),
    }
}

fn parse_model(s: &str) -> Result<SimModel, CliError> {
    match s {
        "isotonic" => Ok(SimModel::Isotonic),
        "less_isotonic" => Ok(SimModel::LessIsotonic),
        other => Err(CliError::Usage(format!(
            "unknown model `{other}` (expected isotonic or less_isotonic)"
        ))),
    }
}

impl ConfigArgs {
    /// Load the config file (if any) and apply every flag override.
    fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::Usage(format!("config {}: {e}", path.display()))
                })?;
                serde_json::from_str(&text).map_err(|e| {
                    CliError::Usage(format!("config {}: {e}", path.display()))
                })?
            }
            None => ExperimentConfig::default(),
        };

        if let Some(methods) = &self.methods {
            config.methods = methods
                .iter()
                .map(|m| parse_method(m))
                .collect::<Result<_, _>>()?;
        }

        if self.train_file.is_some() || self.test_file.is_some() {
            if self.model.is_some() || self.n_train.is_some() || self.n_test.is_some() {
                return Err(CliError::Usage(
                    "--train-file/--test-file conflict with the simulation flags".into(),
                ));
            }
            match (&self.train_file, &self.test_file) {
                (Some(train), Some(test)) => {
                    config.source =
                        DataSource::Files { train: train.clone(), test: test.clone() };
                }
                _ => {
                    return Err(CliError::Usage(
                        "--train-file and --test-file must be given together".into(),
                    ));
                }
            }
        } else if self.model.is_some() || self.n_train.is_some() || self.n_test.is_some() {
            let (mut model, mut n_train, mut n_test) = match config.source {
                DataSource::Sim { model, n_train, n_test } => (model, n_train, n_test),
                DataSource::Files { .. } => (SimModel::Isotonic, 2000, DEFAULT_N_TEST),
            };
            if let Some(m) = &self.model {
                model = parse_model(m)?;
            }
            if let Some(n) = self.n_train {
                n_train = n;
            }
            if let Some(n) = self.n_test {
                n_test = n;
            }
            config.source = DataSource::Sim { model, n_train, n_test };
        }

        if let Some(split) = &self.split {
            config.split = if split == "full" {
                SplitSpec::Full
            } else {
                let parts: Vec<&str> = split.split(',').collect();
                let parse = |s: &str| {
                    s.trim().parse::<f64>().map_err(|_| {
                        CliError::Usage(format!(
                            "--split expects `full` or `EST,CAL` fractions, got `{split}`"
                        ))
                    })
                };
                match parts.as_slice() {
                    [est, cal] => SplitSpec::Fractions {
                        estimation: parse(est)?,
                        calibration: parse(cal)?,
                    },
                    _ => {
                        return Err(CliError::Usage(format!(
                            "--split expects `full` or `EST,CAL` fractions, got `{split}`"
                        )));
                    }
                }
            };
        }

        if let Some(k) = &self.k {
            config.k = if k == "cv" {
                KSelection::Cv
            } else {
                KSelection::Fixed(k.parse().map_err(|_| {
                    CliError::Usage(format!("--k expects a number or `cv`, got `{k}`"))
                })?)
            };
        }

        if let Some(c) = self.c {
            config.c = c;
        }
        if let Some(r) = self.restarts {
            config.restarts = r;
        }
        if let Some(s) = self.seed_sim {
            config.seeds.sim = s;
        }
        if let Some(s) = self.seed_split {
            config.seeds.split = s;
        }
        if let Some(s) = self.seed_eval {
            config.seeds.eval = s;
        }
        if let Some(dir) = &self.out_dir {
            config.out_dir = Some(dir.clone());
        }

        config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(config)
    }

    /// Flag, then config file, then environment, then the working directory.
    fn out_dir(&self, config: &ExperimentConfig) -> PathBuf {
        config
            .out_dir
            .clone()
            .or_else(|| std::env::var_os("CPS_OUT_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

fn cmd_simulate(args: &ConfigArgs) -> Result<(), CliError> {
    let config = args.resolve()?;
    let DataSource::Sim { model, n_train, n_test } = config.source else {
        return Err(CliError::Usage(
            "simulate requires a simulated source (--model/--n-train/--n-test)".into(),
        ));
    };
    let out = args.out_dir(&config);
    std::fs::create_dir_all(&out).map_err(IoError::from)?;

    // Train and test streams: base seed and its successor.
    let train_seed = config.seeds.sim;
    let test_seed = config.seeds.sim.wrapping_add(1);
    let train = generate(model, n_train, train_seed)?;
    let test = generate(model, n_test, test_seed)?;
    write_sample_csv(&out.join("train.csv"), &train)?;
    write_json(&out.join("train.meta.json"), &SimMetadata::new(model, n_train, train_seed))?;
    write_sample_csv(&out.join("test.csv"), &test)?;
    write_json(&out.join("test.meta.json"), &SimMetadata::new(model, n_test, test_seed))?;
    println!(
        "wrote {} and {} ({} model, n = {}/{})",
        out.join("train.csv").display(),
        out.join("test.csv").display(),
        model,
        n_train,
        n_test
    );
    Ok(())
}

fn cmd_fit_predict(train: &PathBuf, test: &PathBuf, args: &ConfigArgs) -> Result<(), CliError> {
    let config = args.resolve()?;
    let out = args.out_dir(&config);
    std::fs::create_dir_all(&out).map_err(IoError::from)?;

    let train_sample = read_sample_csv(train)?;
    let test_sample = read_sample_csv(test)?;
    let test_xs: Vec<f64> = test_sample.points().iter().map(|p| p.x).collect();
    let records = fit_predict(&train_sample, &test_xs, &config)?;
    let path = out.join("records.jsonl");
    write_jsonl(&path, &records)?;
    let flagged = records.iter().filter(|r| r.flag.is_some()).count();
    println!(
        "wrote {} ({} records, {} flagged)",
        path.display(),
        records.len(),
        flagged
    );
    Ok(())
}

fn cmd_evaluate(records: &PathBuf, test: &PathBuf, args: &ConfigArgs) -> Result<(), CliError> {
    let config = args.resolve()?;
    let out = args.out_dir(&config);
    std::fs::create_dir_all(&out).map_err(IoError::from)?;

    let records: Vec<PredictionRecord> = read_jsonl(records)?;
    let test_sample = read_sample_csv(test)?;
    let report = evaluate(&records, &test_sample, config.seeds.eval)?;
    write_reports(&out, &report)?;
    for m in &report.methods {
        println!("{}: mean CRPS {:.6}", m.method, m.mean_crps);
    }
    println!("wrote {}", out.join("report.json").display());
    Ok(())
}

fn cmd_experiment(
    sizes: &Option<Vec<usize>>,
    n_test: Option<usize>,
    args: &ConfigArgs,
) -> Result<(), CliError> {
    let config = args.resolve()?;
    let out = args.out_dir(&config);
    let sizes = sizes.clone().unwrap_or_else(|| EXPERIMENT_SIZES.to_vec());
    let n_test = n_test.unwrap_or(DEFAULT_N_TEST);
    let rows = experiment(&config, &sizes, n_test, &out)?;
    println!("{:<14} {:>7} {:>6} {:>12} {:>15}", "model", "n_train", "method", "mean_crps", "mean_thickness");
    for r in &rows {
        println!(
            "{:<14} {:>7} {:>6} {:>12.6} {:>15}",
            r.model.tag(),
            r.n_train,
            r.method,
            r.mean_crps,
            r.mean_thickness.map(|t| format!("{t:.6}")).unwrap_or_default()
        );
    }
    println!("wrote {}", out.join("comparison.csv").display());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate { config } => cmd_simulate(config),
        Command::FitPredict { train, test, config } => cmd_fit_predict(train, test, config),
        Command::Evaluate { records, test, config } => cmd_evaluate(records, test, config),
        Command::Experiment { sizes, experiment_n_test, config } => {
            cmd_experiment(sizes, *experiment_n_test, config)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
