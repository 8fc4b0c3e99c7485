//! Command-line front end: `fit`, `simulate` and `quantile`.
//!
//! Exit codes: 0 success, 1 usage error, 2 invalid input data, 3 numerical
//! failure. Failures also print one `error_code=` line on stderr.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use funcregime::io::{fit_files, simulate_to_file};
use funcregime::sim::{SimClassifier, SimConfig};
use funcregime::{chi2_quantile, Classifier, Error, EstimatorConfig, Truncation};
use serde::de::DeserializeOwned;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "funcregime", version, about = "Functional panel regression with latent regimes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the model to panel data in long-format CSV files.
    Fit(FitArgs),
    /// Run a Monte Carlo study on the built-in data-generating processes.
    Simulate(SimulateArgs),
    /// Print a chi-squared quantile.
    Quantile(QuantileArgs),
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Curves CSV with header `i,t,s,x`.
    #[arg(long)]
    curves: PathBuf,
    /// Scalars CSV with header `i,t,y,z1,...,zP`.
    #[arg(long)]
    scalars: PathBuf,
    /// Threshold level p_tau in (0, 1).
    #[arg(long)]
    p_tau: Option<f64>,
    /// Fixed bound on the number of regimes (estimated when absent).
    #[arg(long)]
    k_max: Option<usize>,
    /// Fixed truncation level for both fitting steps.
    #[arg(long)]
    m: Option<usize>,
    /// threshold or gmm.
    #[arg(long)]
    classifier: Option<Classifier>,
    /// Largest k tried by the Calinski-Harabasz search.
    #[arg(long)]
    k_range_max: Option<usize>,
    /// JSON estimator settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output model JSON.
    #[arg(long)]
    out: PathBuf,
    /// Directory for `u,value` CSVs of the fitted curves.
    #[arg(long)]
    plot_data: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Data-generating process, 1 or 2.
    #[arg(long)]
    scenario: Option<u8>,
    /// Cross-sectional units per period.
    #[arg(long)]
    n: Option<usize>,
    /// Number of periods.
    #[arg(long = "T")]
    periods: Option<usize>,
    /// Monte Carlo replications.
    #[arg(long)]
    reps: Option<usize>,
    /// Base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Threshold level p_tau in (0, 1).
    #[arg(long)]
    p_tau: Option<f64>,
    /// threshold, gmm or both.
    #[arg(long)]
    classifier: Option<SimClassifier>,
    /// Fixed truncation level for both fitting steps.
    #[arg(long)]
    m: Option<usize>,
    /// Largest k tried by the Calinski-Harabasz search.
    #[arg(long)]
    k_range_max: Option<usize>,
    /// JSON simulation settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output report JSON.
    #[arg(long)]
    out: PathBuf,
    /// Directory receiving every replication's panel as CSV.
    #[arg(long)]
    dump_data: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct QuantileArgs {
    /// Degrees of freedom.
    #[arg(long)]
    df: u32,
    /// Probability in (0, 1).
    #[arg(long)]
    p: f64,
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(Error::from)?;
    serde_json::from_str(&text).map_err(|e| Failure::Lib(Error::Data {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    }))
}

fn fit(args: FitArgs) -> Result<(), Failure> {
    let mut config: EstimatorConfig = read_config(args.config.as_deref())?;
    if let Some(p) = args.p_tau {
        config.p_tau = p;
    }
    if let Some(k) = args.k_max {
        config.k_max = Some(k);
    }
    if let Some(m) = args.m {
        config = config.with_truncation(Truncation::fixed(m));
    }
    if let Some(c) = args.classifier {
        config.classifier = c;
    }
    if let Some(k) = args.k_range_max {
        config.k_range_max = Some(k);
    }
    if !(config.p_tau > 0.0 && config.p_tau < 1.0) {
        return Err(Failure::Usage(format!("--p-tau must lie in (0, 1), got {}", config.p_tau)));
    }
    if config.k_max == Some(0) || args.m == Some(0) {
        return Err(Failure::Usage("--k-max and --m must be at least 1".into()));
    }
    let doc = fit_files(&args.curves, &args.scalars, &config, &args.out, args.plot_data.as_deref())?;
    println!(
        "{} periods, {} regimes (k_max {}), written to {}",
        doc.periods.len(),
        doc.regimes.len(),
        doc.partition.k_max,
        args.out.display()
    );
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let mut config: SimConfig = read_config(args.config.as_deref())?;
    macro_rules! set {
        ($field:ident, $value:expr) => {
            if let Some(v) = $value {
                config.$field = v;
            }
        };
    }
    set!(scenario, args.scenario);
    set!(n, args.n);
    set!(periods, args.periods);
    set!(reps, args.reps);
    set!(seed, args.seed);
    set!(p_tau, args.p_tau);
    set!(classifier, args.classifier);
    if args.m.is_some() {
        config.m_override = args.m;
    }
    if args.k_range_max.is_some() {
        config.k_range_max = args.k_range_max;
    }
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let report = simulate_to_file(&config, &args.out, args.dump_data.as_deref())?;
    for s in &report.summary {
        println!(
            "{:<16} q25 {:.4}  median {:.4}  mean {:.4}  q75 {:.4}  sd {:.4}",
            s.metric, s.q25, s.median, s.mean, s.q75, s.sd
        );
    }
    if !report.failures.is_empty() {
        eprintln!("{} replications failed; see the report", report.failures.len());
    }
    Ok(())
}

fn quantile(args: QuantileArgs) -> Result<(), Failure> {
    let q = chi2_quantile(args.df, args.p).map_err(|e| Failure::Usage(e.to_string()))?;
    println!("{q:.5}");
    Ok(())
}

fn one_line(message: &str) -> String {
    message.split_whitespace().collect::<Vec<_>>().join(" ").replace('"', "'")
}

fn report(code: i32, kind: &str, message: &str) -> i32 {
    eprintln!("error_code={code} kind={kind} message=\"{}\"", one_line(message));
    code
}

/// Parses `argv` (including the program name) and runs the subcommand,
/// returning the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            return report(EXIT_USAGE, "usage", &e.kind().to_string());
        }
    };
    let outcome = match cli.command {
        Command::Fit(a) => fit(a),
        Command::Simulate(a) => simulate(a),
        Command::Quantile(a) => quantile(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => report(EXIT_USAGE, "usage", &msg),
        Err(Failure::Lib(e @ Error::InvalidArgument(_))) => report(EXIT_USAGE, "usage", &e.to_string()),
        Err(Failure::Lib(e)) if e.is_data_error() => report(EXIT_DATA, "data", &e.to_string()),
        Err(Failure::Lib(e)) => report(EXIT_NUMERICAL, "numerical", &e.to_string()),
    }
}
