use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::SimConfig;
use crate::classify::{ClassifierMethod, RegimePartition};
use crate::error::Result;
use crate::fpca::Grid;
use crate::panel::Panel;

/// Number of basis functions in the simulated curves.
pub const BASIS_SIZE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DrawKind {
    Scores = 0,
    Covariate = 1,
    Noise = 2,
}

const DRAW_KINDS: u64 = 3;

/// Independent generator for one (replication, draw kind) pair.
pub(crate) fn substream(seed: u64, rep: usize, kind: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64 * DRAW_KINDS + kind);
    rng
}

/// `j`-th basis function `√2 sin((j − 1/2)πu)`, `j ≥ 1`.
pub fn basis_function(j: usize, u: f64) -> f64 {
    SQRT_2 * ((j as f64 - 0.5) * PI * u).sin()
}

/// Score variance `[(j − 1/2)π]^{-2}` of the `j`-th basis function.
pub fn score_variance(j: usize) -> f64 {
    ((j as f64 - 0.5) * PI).powi(-2)
}

/// True slope of regime `k ∈ {1, 2, 3}` in the given scenario.
pub fn true_slope(scenario: u8, k: usize, u: f64) -> f64 {
    match (k, scenario) {
        (1, 1) => SQRT_2 * (PI * u / 2.0).sin() - u.powi(3) / 2.0 + 18f64.sqrt() * (3.0 * PI * u / 2.0).sin(),
        (1, _) => 8.0 * u - 4.0 * u * u - 5.0 * u.powi(3) + 2.0 * (8.0 * u).sin(),
        (2, _) => -2.0 * u + 8.0 * u * u + 5.0 * u.powi(3) + 2.0 * (8.0 * u).sin(),
        (3, _) => -2.0 * u + (6.0 * u).cos(),
        _ => panic!("regime index {k} out of range 1..=3"),
    }
}

/// `β_t = 5 sin(t/π)` for 1-based `t`.
pub fn true_beta(t: usize) -> f64 {
    5.0 * (t as f64 / PI).sin()
}

/// `ρ_t = 5 cos(t/π)` for 1-based `t`.
pub fn true_rho(t: usize) -> f64 {
    5.0 * (t as f64 / PI).cos()
}

/// Three consecutive blocks `{1..⌊T/3⌋}`, `{⌊T/3⌋+1..⌊2T/3⌋}`, rest, as
/// 0-based period sets.
pub fn true_regimes(periods: usize) -> Vec<Vec<usize>> {
    let first = periods / 3;
    let second = 2 * periods / 3;
    vec![(0..first).collect(), (first..second).collect(), (second..periods).collect()]
}

/// Population quantities behind a simulated panel.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthBundle {
    pub partition: RegimePartition,
    /// `A_1, A_2, A_3` on the grid.
    pub slopes: Vec<Vec<f64>>,
    /// `β_t`, 0-based.
    pub beta: Vec<f64>,
    /// `ρ_t`, 0-based.
    pub rho: Vec<f64>,
}

impl TruthBundle {
    pub fn new(scenario: u8, periods: usize, grid: &Grid) -> Result<TruthBundle> {
        let partition = RegimePartition::new(true_regimes(periods), periods, ClassifierMethod::Supplied, None, 3)?;
        let slopes = (1..=3).map(|k| grid.eval(|u| true_slope(scenario, k, u))).collect();
        Ok(TruthBundle {
            partition,
            slopes,
            beta: (1..=periods).map(true_beta).collect(),
            rho: (1..=periods).map(true_rho).collect(),
        })
    }

    /// True slope of 0-based period `t`.
    pub fn slope_at(&self, t: usize) -> &[f64] {
        let labels = self.partition.labels();
        &self.slopes[labels[t]]
    }
}

/// Draws the panel of replication `rep`.
///
/// Each draw kind (curve scores, covariates, noise) comes from its own
/// substream keyed by `(config.seed, rep)`, so a replication is reproducible
/// in isolation. The functional term is integrated with the same trapezoid
/// quadrature the estimator uses.
pub fn dgp_scenario(config: &SimConfig, rep: usize) -> Result<(Panel, TruthBundle)> {
    config.validate()?;
    let grid = Grid::equidistant(config.grid_len)?;
    let truth = TruthBundle::new(config.scenario, config.periods, &grid)?;
    let l = grid.len();
    let n = config.n;

    let basis = DMatrix::from_fn(BASIS_SIZE, l, |j, col| basis_function(j + 1, grid.points()[col]));
    let sd: Vec<f64> = (1..=BASIS_SIZE).map(|j| score_variance(j).sqrt()).collect();

    let mut score_rng = substream(config.seed, rep, DrawKind::Scores as u64);
    let mut z_rng = substream(config.seed, rep, DrawKind::Covariate as u64);
    let mut eps_rng = substream(config.seed, rep, DrawKind::Noise as u64);

    let labels = truth.partition.labels();
    let mut xs = Vec::with_capacity(config.periods);
    let mut ys = Vec::with_capacity(config.periods);
    let mut zs = Vec::with_capacity(config.periods);
    for t in 0..config.periods {
        let mut theta = DMatrix::<f64>::zeros(n, BASIS_SIZE);
        for i in 0..n {
            for j in 0..BASIS_SIZE {
                let draw: f64 = StandardNormal.sample(&mut score_rng);
                theta[(i, j)] = draw * sd[j];
            }
        }
        let x = &theta * &basis;
        let z = DMatrix::from_fn(n, 1, |_, _| StandardNormal.sample(&mut z_rng));
        let slope = &truth.slopes[labels[t]];
        let y = DVector::from_fn(n, |i, _| {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            let eps: f64 = StandardNormal.sample(&mut eps_rng);
            truth.rho[t] + grid.dot(slope, &row) + truth.beta[t] * z[(i, 0)] + eps
        });
        xs.push(x);
        ys.push(y);
        zs.push(z);
    }
    let panel = Panel::new(grid, xs, ys, zs)?;
    Ok((panel, truth))
}
