//! Discretized L²([0,1]) machinery: trapezoid quadrature on a shared grid,
//! empirical covariance kernels, and the FPCA eigenproblem.
//!
//! Curves are plain slices of values at the grid points. The integral
//! operator with kernel `K` is discretized as `K W` with `W = diag(weights)`;
//! its eigenproblem is solved through the symmetric matrix
//! `W^{1/2} K W^{1/2}`, whose eigenvectors map back to quadrature-orthonormal
//! eigenfunctions via `W^{-1/2}`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative floor below which eigenvalues are treated as numerically zero.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Default upper bound on the truncation search of the eigenvalue-ratio rule.
pub const DEFAULT_SEARCH_CAP: usize = 20;

/// Shared discretization of `[0,1]` with trapezoid weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Grid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid {
    /// Builds a grid from strictly increasing points with endpoints 0 and 1.
    pub fn new(points: Vec<f64>) -> Result<Grid> {
        if points.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 points, got {}",
                points.len()
            )));
        }
        if let Some(bad) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite point at index {bad}")));
        }
        if points[0] != 0.0 || points[points.len() - 1] != 1.0 {
            return Err(Error::InvalidGrid(format!(
                "endpoints must be 0 and 1, got {} and {}",
                points[0],
                points[points.len() - 1]
            )));
        }
        if let Some(i) = points.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "points not strictly increasing at index {}",
                i + 1
            )));
        }
        let l = points.len();
        let mut weights = vec![0.0; l];
        weights[0] = (points[1] - points[0]) / 2.0;
        weights[l - 1] = (points[l - 1] - points[l - 2]) / 2.0;
        for i in 1..l - 1 {
            weights[i] = (points[i + 1] - points[i - 1]) / 2.0;
        }
        Ok(Grid { points, weights })
    }

    /// Equidistant grid with `len` points.
    pub fn equidistant(len: usize) -> Result<Grid> {
        if len < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 points, got {len}")));
        }
        let step = (len - 1) as f64;
        let mut points: Vec<f64> = (0..len).map(|i| i as f64 / step).collect();
        points[len - 1] = 1.0;
        Grid::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Samples `f` at the grid points.
    pub fn eval<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        self.points.iter().map(|&u| f(u)).collect()
    }

    /// Piecewise-linear interpolation of `values` (on this grid) at `at`,
    /// which must lie in `[0, 1]`.
    pub fn interpolate(&self, values: &[f64], at: &[f64]) -> Vec<f64> {
        let pts = &self.points;
        at.iter()
            .map(|&u| {
                let hi = pts.partition_point(|&p| p < u).clamp(1, pts.len() - 1);
                let lo = hi - 1;
                let span = pts[hi] - pts[lo];
                let frac = ((u - pts[lo]) / span).clamp(0.0, 1.0);
                values[lo] + frac * (values[hi] - values[lo])
            })
            .collect()
    }

    /// Quadrature inner product, unchecked lengths.
    #[inline]
    pub(crate) fn dot(&self, f: &[f64], g: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(f.iter().zip(g))
            .map(|(w, (a, b))| w * a * b)
            .sum()
    }

    /// Squared L² norm of `f - g`, unchecked lengths.
    #[inline]
    pub(crate) fn dist_sq(&self, f: &[f64], g: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(f.iter().zip(g))
            .map(|(w, (a, b))| w * (a - b) * (a - b))
            .sum()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: len,
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for Grid {
    type Error = Error;

    fn try_from(points: Vec<f64>) -> Result<Grid> {
        Grid::new(points)
    }
}

impl From<Grid> for Vec<f64> {
    fn from(grid: Grid) -> Vec<f64> {
        grid.points
    }
}

/// `∫ f g` under the grid quadrature.
pub fn inner_product(f: &[f64], g: &[f64], grid: &Grid) -> Result<f64> {
    grid.check_len(f.len())?;
    grid.check_len(g.len())?;
    Ok(grid.dot(f, g))
}

/// Squared L² norm under the grid quadrature.
pub fn norm_sq(f: &[f64], grid: &Grid) -> Result<f64> {
    inner_product(f, f, grid)
}

/// Empirical covariance kernel `N^{-1} Σ_i X_i(u_a) X_i(u_b)` of already
/// centered curves stored as the rows of `curves` (N × L).
pub fn empirical_covariance(curves: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if curves.nrows() == 0 {
        return Err(Error::InvalidArgument(
            "empirical covariance of zero curves".into(),
        ));
    }
    let mut kernel = curves.tr_mul(curves);
    kernel /= curves.nrows() as f64;
    symmetrize(&mut kernel);
    Ok(kernel)
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Eigenvalue/eigenfunction pairs of a discretized covariance operator.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    /// Nonincreasing, nonnegative.
    pub eigenvalues: Vec<f64>,
    /// One curve on the grid per eigenvalue, quadrature-orthonormal.
    pub eigenfunctions: Vec<Vec<f64>>,
}

impl EigenSystem {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Scores `⟨curve, φ_j⟩` for the first `count` eigenfunctions.
    pub fn scores(&self, curve: &[f64], grid: &Grid, count: usize) -> Vec<f64> {
        self.eigenfunctions[..count]
            .iter()
            .map(|phi| grid.dot(curve, phi))
            .collect()
    }

    /// `Σ_j coefs[j] · φ_j` on the grid.
    pub fn combine(&self, coefs: &[f64]) -> Vec<f64> {
        let len = self.eigenfunctions.first().map_or(0, Vec::len);
        let mut out = vec![0.0; len];
        for (c, phi) in coefs.iter().zip(&self.eigenfunctions) {
            for (o, p) in out.iter_mut().zip(phi) {
                *o += c * p;
            }
        }
        out
    }
}

/// Solves `∫ K(u,v) φ(v) dv = λ φ(u)` on the grid, returning at most
/// `max_components` pairs whose eigenvalue exceeds `EIGEN_FLOOR · λ_1`.
pub fn eigen_fpca(kernel: &DMatrix<f64>, grid: &Grid, max_components: usize) -> Result<EigenSystem> {
    let l = grid.len();
    if kernel.nrows() != l || kernel.ncols() != l {
        return Err(Error::LengthMismatch {
            expected: l,
            got: kernel.nrows().max(kernel.ncols()),
        });
    }
    let sqrt_w = DVector::from_iterator(l, grid.weights().iter().map(|w| w.sqrt()));
    let mut m = kernel.clone();
    for j in 0..l {
        for i in 0..l {
            m[(i, j)] *= sqrt_w[i] * sqrt_w[j];
        }
    }
    symmetrize(&mut m);
    let eig = SymmetricEigen::new(m);

    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let top = eig.eigenvalues[order[0]].max(0.0);
    let floor = EIGEN_FLOOR * top;
    let mut eigenvalues = Vec::new();
    let mut eigenfunctions = Vec::new();
    for &idx in order.iter().take(max_components) {
        let lambda = eig.eigenvalues[idx];
        if top <= 0.0 || lambda <= floor {
            break;
        }
        let v = eig.eigenvectors.column(idx);
        let mut phi: Vec<f64> = (0..l).map(|i| v[i] / sqrt_w[i]).collect();
        // Unit norm under quadrature; the eigenvector is unit in R^L already,
        // renormalize to wash out rounding.
        let norm = grid.dot(&phi, &phi).sqrt();
        let peak = phi
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        let sign = if peak < 0.0 { -1.0 } else { 1.0 };
        for p in &mut phi {
            *p *= sign / norm;
        }
        eigenvalues.push(lambda);
        eigenfunctions.push(phi);
    }
    Ok(EigenSystem {
        eigenvalues,
        eigenfunctions,
    })
}

/// Eigenvalue-ratio truncation: `argmax_l λ_l / λ_{l+1}` over
/// `1 ≤ l < min(search_cap, count)` where `count` is the number of
/// eigenvalues above `floor`. Ties go to the smallest `l`. Returns 1 when
/// fewer than two usable eigenvalues exist.
pub fn eigenvalue_ratio_select(eigenvalues: &[f64], search_cap: usize, floor: f64) -> usize {
    ratio_select_between(eigenvalues, 1, search_cap, floor)
}

/// Eigenvalue-ratio truncation restricted to `min_m ≤ l < search_cap`.
pub(crate) fn ratio_select_between(
    eigenvalues: &[f64],
    min_m: usize,
    search_cap: usize,
    floor: f64,
) -> usize {
    let usable = eigenvalues.iter().take_while(|&&v| v > floor).count();
    let upper = search_cap.min(usable);
    let lower = min_m.max(1);
    if upper < 2 || lower >= upper {
        return lower.min(usable.max(1));
    }
    let mut best = lower;
    let mut best_ratio = f64::NEG_INFINITY;
    for l in lower..upper {
        let ratio = eigenvalues[l - 1] / eigenvalues[l];
        if ratio > best_ratio {
            best_ratio = ratio;
            best = l;
        }
    }
    best
}

/// How many FPCA components to keep when expanding a slope function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum Truncation {
    /// Eigenvalue-ratio criterion, searched over `min_m ≤ m < max_m`
    /// (`max_m` defaults to `min(N−1, L−1, 20)` for `N` curves).
    EigenvalueRatio { min_m: usize, max_m: Option<usize> },
    /// A fixed number of components.
    Fixed { m: usize },
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation::EigenvalueRatio {
            min_m: 1,
            max_m: None,
        }
    }
}

impl Truncation {
    pub fn fixed(m: usize) -> Truncation {
        Truncation::Fixed { m }
    }

    /// Picks the truncation level for an eigensystem estimated from
    /// `n_curves` curves on `grid_len` points.
    pub fn select(&self, eig: &EigenSystem, n_curves: usize, grid_len: usize) -> Result<usize> {
        match *self {
            Truncation::Fixed { m } => {
                if m == 0 {
                    return Err(Error::InvalidArgument("truncation must be at least 1".into()));
                }
                if m > eig.len() {
                    return Err(Error::TooManyComponents {
                        requested: m,
                        available: eig.len(),
                    });
                }
                Ok(m)
            }
            Truncation::EigenvalueRatio { min_m, max_m } => {
                if eig.is_empty() {
                    return Err(Error::TooManyComponents {
                        requested: 1,
                        available: 0,
                    });
                }
                let cap = max_m.unwrap_or_else(|| {
                    n_curves
                        .saturating_sub(1)
                        .min(grid_len.saturating_sub(1))
                        .min(DEFAULT_SEARCH_CAP)
                });
                let floor = EIGEN_FLOOR * eig.eigenvalues[0];
                Ok(ratio_select_between(&eig.eigenvalues, min_m, cap, floor))
            }
        }
    }
}
