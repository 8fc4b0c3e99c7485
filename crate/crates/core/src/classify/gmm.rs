use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans, KMeansConfig};
use super::{ClassifierMethod, RegimePartition};
use crate::error::{Error, Result};
use crate::fpca::Grid;
use crate::panel::StepOneFit;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub restarts: usize,
    pub max_iter: usize,
    /// Relative log-likelihood improvement below which EM stops.
    pub tol: f64,
    pub variance_floor: f64,
    /// Largest number of mixture components tried.
    pub max_components: usize,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            restarts: 5,
            max_iter: 500,
            tol: 1e-10,
            variance_floor: 1e-8,
            max_components: 9,
            seed: 0x0067_6d6d,
        }
    }
}

/// A fitted diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub loglik: f64,
    /// Log-likelihood at every E-step of the selected restart.
    pub loglik_trace: Vec<f64>,
    pub bic: f64,
    /// Maximum-posterior component of every point.
    pub labels: Vec<usize>,
}

impl GmmFit {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }
}

fn log_density(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    x.iter()
        .zip(mean)
        .zip(var)
        .map(|((x, m), v)| -0.5 * (ln_2pi + v.ln() + (x - m) * (x - m) / v))
        .sum()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

struct EmState {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

impl EmState {
    // E-step: responsibilities and log-likelihood.
    fn expect(&self, points: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
        let k = self.weights.len();
        let mut loglik = 0.0;
        let mut resp = Vec::with_capacity(points.len());
        let mut logs = vec![0.0; k];
        for p in points {
            for j in 0..k {
                logs[j] = self.weights[j].ln() + log_density(p, &self.means[j], &self.variances[j]);
            }
            let norm = log_sum_exp(&logs);
            loglik += norm;
            resp.push(logs.iter().map(|l| (l - norm).exp()).collect());
        }
        (resp, loglik)
    }

    fn maximize(points: &[Vec<f64>], resp: &[Vec<f64>], k: usize, floor: f64) -> (EmState, Vec<f64>) {
        let dim = points[0].len();
        let n = points.len() as f64;
        let mut counts = vec![0.0; k];
        let mut means = vec![vec![0.0; dim]; k];
        for (p, r) in points.iter().zip(resp) {
            for j in 0..k {
                counts[j] += r[j];
                for d in 0..dim {
                    means[j][d] += r[j] * p[d];
                }
            }
        }
        for j in 0..k {
            if counts[j] > 0.0 {
                means[j].iter_mut().for_each(|m| *m /= counts[j]);
            }
        }
        let mut variances = vec![vec![0.0; dim]; k];
        for (p, r) in points.iter().zip(resp) {
            for j in 0..k {
                for d in 0..dim {
                    let dev = p[d] - means[j][d];
                    variances[j][d] += r[j] * dev * dev;
                }
            }
        }
        for j in 0..k {
            for v in &mut variances[j] {
                *v = if counts[j] > 0.0 { (*v / counts[j]).max(floor) } else { floor };
            }
        }
        let weights = counts.iter().map(|c| (c / n).max(f64::MIN_POSITIVE)).collect();
        (
            EmState {
                weights,
                means,
                variances,
            },
            counts,
        )
    }
}

/// Fits a `k`-component diagonal Gaussian mixture by EM, initialized from
/// k-means clusterings (one per restart). Returns `None` when every restart
/// collapses a component onto fewer than two effective points.
pub fn fit_gmm(points: &[Vec<f64>], k: usize, config: &EmConfig) -> Result<Option<GmmFit>> {
    if points.is_empty() || k == 0 || k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "mixture with {k} components on {} points",
            points.len()
        )));
    }
    let dim = points[0].len();
    let mut best: Option<GmmFit> = None;
    for restart in 0..config.restarts.max(1) {
        let km = kmeans(
            points,
            k,
            &KMeansConfig {
                restarts: 1,
                max_iter: 100,
                seed: config.seed.wrapping_add(restart as u64),
            },
        )?;
        let hard: Vec<Vec<f64>> = km
            .labels
            .iter()
            .map(|&l| (0..k).map(|j| if j == l { 1.0 } else { 0.0 }).collect())
            .collect();
        let (mut state, _) = EmState::maximize(points, &hard, k, config.variance_floor);
        let mut trace = Vec::new();
        let mut counts;
        loop {
            let (resp, loglik) = state.expect(points);
            let done = trace
                .last()
                .is_some_and(|&prev: &f64| loglik - prev <= config.tol * (1.0 + loglik.abs()));
            trace.push(loglik);
            let (next, c) = EmState::maximize(points, &resp, k, config.variance_floor);
            counts = c;
            if done || trace.len() >= config.max_iter {
                break;
            }
            state = next;
        }
        // `state` produced the last recorded log-likelihood.
        let (resp, loglik) = state.expect(points);
        if k > 1 && counts.iter().any(|&c| c < 2.0) {
            continue;
        }
        let labels = resp
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map_or(0, |(j, _)| j)
            })
            .collect();
        let params = (k - 1) + 2 * k * dim;
        let bic = -2.0 * loglik + params as f64 * (points.len() as f64).ln();
        let fit = GmmFit {
            weights: state.weights,
            means: state.means,
            variances: state.variances,
            loglik,
            loglik_trace: trace,
            bic,
            labels,
        };
        if best.as_ref().is_none_or(|b| fit.loglik > b.loglik) {
            best = Some(fit);
        }
    }
    Ok(best)
}

fn sign_aligned_features(step1: &StepOneFit, grid: &Grid) -> Vec<Vec<f64>> {
    let m = step1.m_lower;
    let reference = &step1.fits[0].eig.eigenfunctions;
    step1
        .fits
        .iter()
        .map(|f| {
            (0..m)
                .map(|j| {
                    let overlap = grid.dot(&f.eig.eigenfunctions[j], &reference[j]);
                    if overlap < 0.0 {
                        -f.a_hat[j]
                    } else {
                        f.a_hat[j]
                    }
                })
                .collect()
        })
        .collect()
}

/// Gaussian-mixture classification of the periods' slope coefficients
/// `(a_1,t, …, a_{m_lower},t)`, with the number of components picked by BIC
/// over `1..=min(k_max, config.max_components, T)`.
///
/// Eigenfunction signs are arbitrary per period, so each coefficient is
/// sign-aligned against the first period's eigenfunctions before clustering.
pub fn classify_gmm(step1: &StepOneFit, grid: &Grid, k_max: usize, config: &EmConfig) -> Result<RegimePartition> {
    if step1.fits.is_empty() {
        return Err(Error::InvalidArgument("no periods to classify".into()));
    }
    let features = sign_aligned_features(step1, grid);
    let upper = k_max.min(config.max_components).min(features.len()).max(1);
    let mut best: Option<GmmFit> = None;
    for k in 1..=upper {
        if let Some(fit) = fit_gmm(&features, k, config)? {
            if best.as_ref().is_none_or(|b| fit.bic < b.bic) {
                best = Some(fit);
            }
        }
    }
    let best = best.ok_or_else(|| Error::InvalidArgument("no admissible mixture fit".into()))?;
    Ok(RegimePartition::from_labels(
        &best.labels,
        ClassifierMethod::Gmm,
        None,
        k_max,
    ))
}
