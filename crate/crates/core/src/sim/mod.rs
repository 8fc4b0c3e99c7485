//! Monte Carlo harness: the three-regime data-generating processes, error
//! metrics, and a reproducible replication runner.

mod dgp;
mod metrics;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dgp::{
    basis_function, dgp_scenario, score_variance, true_beta, true_regimes, true_rho, true_slope, TruthBundle,
    BASIS_SIZE,
};
pub use metrics::{align_regimes, classification_error, confusion, max_weight_assignment, relative_l2_error};

use crate::classify::{DEFAULT_P_TAU, RegimePartition};
use crate::error::{Error, Result};
use crate::fpca::Truncation;
use crate::io::SCHEMA_VERSION;
use crate::panel::{fit_step1, StepOneConfig};
use crate::pipeline::{classify, regime_bound, Classifier, EstimatorConfig};
use crate::refit::refit_regimes;

/// Which classifiers a simulation runs. With `Both`, the threshold
/// partition drives the pooled refit and the mixture only contributes its
/// classification error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimClassifier {
    #[default]
    Threshold,
    Gmm,
    Both,
}

impl std::str::FromStr for SimClassifier {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "both" => Ok(SimClassifier::Both),
            other => match other.parse::<Classifier>()? {
                Classifier::Threshold => Ok(SimClassifier::Threshold),
                Classifier::Gmm => Ok(SimClassifier::Gmm),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub scenario: u8,
    pub n: usize,
    pub periods: usize,
    pub reps: usize,
    /// Replication `r` draws from substreams keyed by `(seed, r)` only, so
    /// both scenarios share their random draws under the same seed.
    pub seed: u64,
    pub p_tau: f64,
    pub classifier: SimClassifier,
    pub grid_len: usize,
    /// Fixed truncation for both fitting steps; eigenvalue-ratio rule when
    /// absent.
    pub m_override: Option<usize>,
    /// Largest cluster count tried for the Caliński–Harabasz bound.
    pub k_range_max: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            scenario: 1,
            n: 100,
            periods: 50,
            reps: 200,
            seed: 1,
            p_tau: DEFAULT_P_TAU,
            classifier: SimClassifier::Threshold,
            grid_len: 101,
            m_override: None,
            k_range_max: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidArgument(msg));
        if !matches!(self.scenario, 1 | 2) {
            return fail(format!("scenario must be 1 or 2, got {}", self.scenario));
        }
        if self.n < 2 {
            return fail(format!("n must be >= 2, got {}", self.n));
        }
        if self.periods < 3 {
            return fail(format!("T must be >= 3, got {}", self.periods));
        }
        if self.reps < 1 {
            return fail("reps must be >= 1".into());
        }
        if !(self.p_tau > 0.0 && self.p_tau < 1.0) {
            return fail(format!("p_tau must lie in (0, 1), got {}", self.p_tau));
        }
        if self.grid_len < 2 {
            return fail(format!("grid size must be >= 2, got {}", self.grid_len));
        }
        if self.m_override == Some(0) {
            return fail("truncation override must be >= 1".into());
        }
        Ok(())
    }

    /// Estimator settings implied by this simulation.
    pub fn estimator(&self) -> EstimatorConfig {
        let truncation = self.m_override.map_or_else(Truncation::default, Truncation::fixed);
        EstimatorConfig {
            p_tau: self.p_tau,
            k_range_max: self.k_range_max,
            classifier: match self.classifier {
                SimClassifier::Gmm => Classifier::Gmm,
                _ => Classifier::Threshold,
            },
            ..EstimatorConfig::default()
        }
        .with_truncation(truncation)
    }
}

/// Metrics of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    /// `T^{-1} Σ_t (β̂_t − β_t)²`.
    pub beta_mse: f64,
    pub class_error_thr: Option<f64>,
    pub class_error_gmm: Option<f64>,
    /// Relative L² error of the pooled slope matched to `A_1, A_2, A_3`.
    pub rel_error: Vec<f64>,
    pub k_hat: usize,
    pub k_max: usize,
    pub m_lower: usize,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub rep: usize,
    pub error: String,
}

/// Distribution summary of one metric over replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub count: usize,
    pub q25: f64,
    pub median: f64,
    pub mean: f64,
    pub q75: f64,
    pub sd: f64,
}

impl MetricSummary {
    /// Quantiles by linear interpolation between order statistics (R type 7);
    /// `sd` uses the `n − 1` divisor.
    pub fn from_values(metric: &str, values: &[f64]) -> Option<MetricSummary> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let quantile = |p: f64| {
            let h = (sorted.len() - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(sorted.len() - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        };
        let count = values.len();
        let mean = values.iter().sum::<f64>() / count as f64;
        let sd = if count > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(MetricSummary {
            metric: metric.to_string(),
            count,
            q25: quantile(0.25),
            median: quantile(0.5),
            mean,
            q75: quantile(0.75),
            sd,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub schema_version: String,
    pub library_version: String,
    pub config: SimConfig,
    pub records: Vec<RepRecord>,
    pub failures: Vec<FailureRecord>,
    pub summary: Vec<MetricSummary>,
}

impl SimReport {
    /// Builds summaries from the records.
    pub fn new(config: SimConfig, records: Vec<RepRecord>, failures: Vec<FailureRecord>) -> SimReport {
        let summary = summarize(&records);
        SimReport {
            schema_version: SCHEMA_VERSION.to_string(),
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            records,
            failures,
            summary,
        }
    }

    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.summary.iter().find(|s| s.metric == name)
    }
}

fn summarize(records: &[RepRecord]) -> Vec<MetricSummary> {
    let collect = |f: &dyn Fn(&RepRecord) -> Option<f64>| -> Vec<f64> { records.iter().filter_map(f).collect() };
    let columns: Vec<(&str, Vec<f64>)> = vec![
        ("beta_mse", collect(&|r| Some(r.beta_mse))),
        ("class_error_thr", collect(&|r| r.class_error_thr)),
        ("class_error_gmm", collect(&|r| r.class_error_gmm)),
        ("rel_error_a1", collect(&|r| r.rel_error.first().copied())),
        ("rel_error_a2", collect(&|r| r.rel_error.get(1).copied())),
        ("rel_error_a3", collect(&|r| r.rel_error.get(2).copied())),
        ("k_hat", collect(&|r| Some(r.k_hat as f64))),
    ];
    columns
        .iter()
        .filter_map(|(name, values)| MetricSummary::from_values(name, values))
        .collect()
}

/// Estimated regime whose pooled slope is compared against each true slope:
/// the optimally matched regime, or the one overlapping most when the true
/// regime is unmatched.
fn regime_for_truth(est: &RegimePartition, truth: &RegimePartition) -> Vec<usize> {
    let matching = align_regimes(est, truth);
    let overlap = confusion(est, truth);
    (0..truth.k_hat())
        .map(|k| {
            matching.iter().position(|m| *m == Some(k)).unwrap_or_else(|| {
                (0..est.k_hat())
                    .max_by(|&a, &b| overlap[a][k].total_cmp(&overlap[b][k]).then(b.cmp(&a)))
                    .unwrap_or(0)
            })
        })
        .collect()
}

/// Draws and evaluates replication `rep`.
pub fn run_replication(config: &SimConfig, rep: usize) -> Result<RepRecord> {
    let (panel, truth) = dgp_scenario(config, rep)?;
    let est = config.estimator();
    let step1 = fit_step1(
        &panel,
        &StepOneConfig {
            truncation: est.step1_truncation,
        },
    )?;
    let k_max = regime_bound(&step1, &panel, &est)?;

    let thr = match config.classifier {
        SimClassifier::Threshold | SimClassifier::Both => {
            Some(classify(&step1, &panel, k_max, Classifier::Threshold, &est)?)
        }
        SimClassifier::Gmm => None,
    };
    let gmm = match config.classifier {
        SimClassifier::Gmm | SimClassifier::Both => Some(classify(&step1, &panel, k_max, Classifier::Gmm, &est)?),
        SimClassifier::Threshold => None,
    };
    let tau = thr.as_ref().or(gmm.as_ref()).map_or(f64::NAN, |(_, tau)| *tau);
    let primary = thr.as_ref().or(gmm.as_ref()).map(|(p, _)| p).expect("a classifier ran");
    let fit = refit_regimes(&panel, primary, &step1, &est.refit_truncation)?;

    let beta_mse = step1
        .fits
        .iter()
        .zip(&truth.beta)
        .map(|(f, b)| (f.beta_hat[0] - b).powi(2))
        .sum::<f64>()
        / config.periods as f64;
    let rel_error = regime_for_truth(primary, &truth.partition)
        .iter()
        .zip(&truth.slopes)
        .map(|(&a, slope)| relative_l2_error(&fit.regimes[a].slope, slope, panel.grid()))
        .collect::<Result<Vec<_>>>()?;
    Ok(RepRecord {
        rep,
        beta_mse,
        class_error_thr: thr
            .as_ref()
            .map(|(p, _)| classification_error(p, &truth.partition))
            .transpose()?,
        class_error_gmm: gmm
            .as_ref()
            .map(|(p, _)| classification_error(p, &truth.partition))
            .transpose()?,
        rel_error,
        k_hat: primary.k_hat(),
        k_max,
        m_lower: step1.m_lower,
        tau,
    })
}

/// Runs every replication (in parallel) and aggregates in replication order.
/// Failed replications are listed with their error and left out of the
/// summaries.
pub fn run_monte_carlo(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let outcomes: Vec<Result<RepRecord>> = (0..config.reps)
        .into_par_iter()
        .map(|rep| run_replication(config, rep))
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (rep, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => records.push(r),
            Err(e) => failures.push(FailureRecord {
                rep,
                error: e.to_string(),
            }),
        }
    }
    Ok(SimReport::new(config.clone(), records, failures))
}
