//! Partial functional linear panel regression with latent regimes of the
//! functional slope.
//!
//! The estimator runs in three steps:
//!
//! 1. [`panel::fit_step1`]: for every period, center across units, decompose
//!    the curves by FPCA and regress the response on the leading scores and
//!    the scalar covariates.
//! 2. [`classify`]: group periods whose variance-scaled slopes are within a
//!    chi-squared based threshold of each other, with the number of regimes
//!    bounded by a Caliński–Harabasz k-means estimate.
//! 3. [`refit::refit_regimes`]: pool all periods of a regime to re-estimate
//!    its slope function.
//!
//! [`pipeline::fit_pipeline`] chains the three steps; [`sim`] holds the Monte
//! Carlo harness and [`io`] the file formats.

pub mod chi2;
pub mod classify;
pub mod error;
pub mod fpca;
pub mod io;
pub mod panel;
pub mod pipeline;
pub mod refit;
pub mod sim;

pub use chi2::{chi2_cdf, chi2_quantile};
pub use classify::{
    classify_gmm, classify_threshold, delta_matrix, kmax_calinski_harabasz, threshold_tau, ClassifierMethod,
    DistanceMatrix, RegimePartition,
};
pub use error::{Error, Result};
pub use fpca::{eigen_fpca, eigenvalue_ratio_select, empirical_covariance, inner_product, EigenSystem, Grid, Truncation};
pub use io::{load_curves_csv, load_panel, load_scalars_csv, ModelDocument};
pub use panel::{fit_period, fit_step1, scale_alpha, within_center, Panel, PeriodFit, StepOneConfig, StepOneFit};
pub use pipeline::{fit_pipeline, Classifier, EstimatorConfig, PipelineFit};
pub use refit::{refit_regimes, RegimeEstimate, RegimeFit};
pub use sim::{run_monte_carlo, SimConfig, SimReport};
