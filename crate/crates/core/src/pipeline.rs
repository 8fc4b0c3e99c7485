//! The full three-step estimator: per-period fits, regime classification,
//! and regime-pooled refits.

use serde::{Deserialize, Serialize};

use crate::classify::{
    classify_gmm, classify_threshold, delta_matrix, kmax_calinski_harabasz, threshold_tau, EmConfig,
    KMeansConfig, RegimePartition, DEFAULT_P_TAU,
};
use crate::error::Result;
use crate::fpca::Truncation;
use crate::panel::{fit_step1, Panel, StepOneConfig, StepOneFit};
use crate::refit::{refit_regimes, RegimeFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classifier {
    #[default]
    Threshold,
    Gmm,
}

impl std::str::FromStr for Classifier {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "threshold" | "thr" => Ok(Classifier::Threshold),
            "gmm" | "mclust" => Ok(Classifier::Gmm),
            other => Err(format!("unknown classifier '{other}' (expected threshold or gmm)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    /// Truncation rule of the per-period fits.
    pub step1_truncation: Truncation,
    /// Truncation rule of the regime-pooled fits.
    pub refit_truncation: Truncation,
    pub p_tau: f64,
    /// Fixed bound on the number of regimes; estimated by Caliński–Harabasz
    /// when absent.
    pub k_max: Option<usize>,
    pub classifier: Classifier,
    /// Number of equidistant points on which scaled slopes are compared for
    /// the Caliński–Harabasz bound.
    pub grid_eval_count: usize,
    /// Largest cluster count tried for the Caliński–Harabasz bound; `T − 1`
    /// when absent.
    pub k_range_max: Option<usize>,
    pub kmeans: KMeansConfig,
    pub em: EmConfig,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            step1_truncation: Truncation::default(),
            refit_truncation: Truncation::default(),
            p_tau: DEFAULT_P_TAU,
            k_max: None,
            classifier: Classifier::Threshold,
            grid_eval_count: 101,
            k_range_max: None,
            kmeans: KMeansConfig::default(),
            em: EmConfig::default(),
        }
    }
}

impl EstimatorConfig {
    /// Uses the same truncation rule in both fitting steps.
    pub fn with_truncation(mut self, truncation: Truncation) -> Self {
        self.step1_truncation = truncation;
        self.refit_truncation = truncation;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineFit {
    pub step1: StepOneFit,
    pub k_max: usize,
    pub tau: f64,
    pub partition: RegimePartition,
    pub regimes: RegimeFit,
}

/// Regime bound used by the classifiers.
pub fn regime_bound(step1: &StepOneFit, panel: &Panel, config: &EstimatorConfig) -> Result<usize> {
    match config.k_max {
        Some(k) => Ok(k.max(1)),
        None => kmax_calinski_harabasz(
            step1,
            panel.grid(),
            config.grid_eval_count,
            config.k_range_max.unwrap_or(usize::MAX),
            &config.kmeans,
        ),
    }
}

/// Classifies the periods of a step-one fit with the configured classifier.
pub fn classify(step1: &StepOneFit, panel: &Panel, k_max: usize, classifier: Classifier, config: &EstimatorConfig) -> Result<(RegimePartition, f64)> {
    let tau = threshold_tau(panel.n_units(), step1.m_lower, config.p_tau)?;
    let partition = match classifier {
        Classifier::Threshold => {
            let delta = delta_matrix(step1, panel.grid())?;
            classify_threshold(&delta, tau, k_max)?
        }
        Classifier::Gmm => classify_gmm(step1, panel.grid(), k_max, &config.em)?,
    };
    Ok((partition, tau))
}

/// Runs all three estimation steps.
pub fn fit_pipeline(panel: &Panel, config: &EstimatorConfig) -> Result<PipelineFit> {
    let step1 = fit_step1(
        panel,
        &StepOneConfig {
            truncation: config.step1_truncation,
        },
    )?;
    let k_max = regime_bound(&step1, panel, config)?;
    let (partition, tau) = classify(&step1, panel, k_max, config.classifier, config)?;
    let regimes = refit_regimes(panel, &partition, &step1, &config.refit_truncation)?;
    Ok(PipelineFit {
        step1,
        k_max,
        tau,
        partition,
        regimes,
    })
}
