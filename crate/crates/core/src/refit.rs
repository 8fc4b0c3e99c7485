//! Regime-pooled slope estimation given a partition of the periods.
//!
//! Curves of all periods in a regime are centered at the regime-average
//! cross-sectional mean and pooled into one covariance operator. The slope
//! coefficients then follow in closed form from the pooled eigenpairs and the
//! responses net of the period-specific covariate effects from step one,
//! which are not re-estimated.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::classify::RegimePartition;
use crate::error::{Error, Result};
use crate::fpca::{eigen_fpca, symmetrize, EigenSystem, Truncation};
use crate::panel::{score_matrix, Panel, StepOneFit};

/// Pooled estimate for one regime.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeEstimate {
    /// 0-based member periods, ascending.
    pub members: Vec<usize>,
    pub m: usize,
    pub eig: EigenSystem,
    pub a_tilde: Vec<f64>,
    /// Pooled slope function on the grid.
    pub slope: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeFit {
    pub regimes: Vec<RegimeEstimate>,
}

/// Regime-centered curves `X_it − |G|^{-1} Σ_{s∈G} X̄_s` for each member,
/// in member order.
fn regime_centered(panel: &Panel, members: &[usize]) -> Vec<DMatrix<f64>> {
    let l = panel.grid().len();
    let n = panel.n_units() as f64;
    let mut pooled_mean = DVector::<f64>::zeros(l);
    for &t in members {
        for (acc, col) in pooled_mean.iter_mut().zip(panel.curves(t).column_iter()) {
            *acc += col.sum() / n;
        }
    }
    pooled_mean /= members.len() as f64;
    members
        .iter()
        .map(|&t| {
            let mut x = panel.curves(t).clone();
            for (mut col, mean) in x.column_iter_mut().zip(pooled_mean.iter()) {
                col.add_scalar_mut(-mean);
            }
            x
        })
        .collect()
}

/// Pooled covariance `(n|G|)^{-1} Σ_t Σ_i X_it^cc ⊗ X_it^cc`, accumulated one
/// period block at a time.
fn pooled_covariance(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let l = blocks[0].ncols();
    let mut kernel = DMatrix::<f64>::zeros(l, l);
    let mut count = 0usize;
    for block in blocks {
        kernel.gemm_tr(1.0, block, block, 1.0);
        count += block.nrows();
    }
    kernel /= count as f64;
    symmetrize(&mut kernel);
    kernel
}

fn refit_one(
    panel: &Panel,
    members: &[usize],
    step1: &StepOneFit,
    truncation: &Truncation,
) -> Result<RegimeEstimate> {
    let grid = panel.grid();
    let blocks = regime_centered(panel, members);
    let kernel = pooled_covariance(&blocks);
    let eig = eigen_fpca(&kernel, grid, grid.len())?;
    let pooled_n = panel.n_units() * members.len();
    let m = truncation.select(&eig, pooled_n, grid.len())?;

    let mut cross = vec![0.0; m];
    for (block, &t) in blocks.iter().zip(members) {
        let centered = panel.center_period(t);
        let beta = DVector::from_column_slice(&step1.fits[t].beta_hat);
        let net = &centered.y - &centered.z * beta;
        let scores = score_matrix(block, &eig, grid, m);
        let proj = scores.tr_mul(&net);
        for (c, v) in cross.iter_mut().zip(proj.iter()) {
            *c += v;
        }
    }
    let a_tilde: Vec<f64> = cross
        .iter()
        .zip(&eig.eigenvalues)
        .map(|(c, lambda)| c / (pooled_n as f64) / lambda)
        .collect();
    let slope = eig.combine(&a_tilde);
    Ok(RegimeEstimate {
        members: members.to_vec(),
        m,
        eig,
        a_tilde,
        slope,
    })
}

/// Pooled slope estimate for every regime of `partition`.
pub fn refit_regimes(
    panel: &Panel,
    partition: &RegimePartition,
    step1: &StepOneFit,
    truncation: &Truncation,
) -> Result<RegimeFit> {
    let periods = panel.n_periods();
    if step1.n_periods() != periods {
        return Err(Error::InvalidArgument(format!(
            "step-one fit covers {} periods, panel has {periods}",
            step1.n_periods()
        )));
    }
    if partition.n_periods() != periods {
        return Err(Error::InvalidArgument(format!(
            "partition covers {} periods, panel has {periods}",
            partition.n_periods()
        )));
    }
    let regimes = partition
        .regimes
        .par_iter()
        .map(|members| {
            if members.is_empty() {
                return Err(Error::InvalidArgument("empty regime".into()));
            }
            refit_one(panel, members, step1, truncation)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RegimeFit { regimes })
}
