//! Panel containers and the per-period estimator.
//!
//! For every period the fixed effect is removed by centering across units,
//! the centered curves are decomposed by FPCA, and the response is regressed
//! jointly on the leading FPCA scores and the centered scalar covariates.
//!
//! Period indices in this module are 0-based. Error values carry 1-based
//! period labels so they line up with the `t` column of the input files.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpca::{eigen_fpca, empirical_covariance, EigenSystem, Grid, Truncation};

/// Relative size of the smallest R diagonal below which the design is
/// considered rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Observed panel: `n` units over `T` periods, curves on a shared grid, a
/// scalar response and `P ≥ 0` scalar covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    grid: Grid,
    x: Vec<DMatrix<f64>>,
    y: Vec<DVector<f64>>,
    z: Vec<DMatrix<f64>>,
}

impl Panel {
    /// `x[t]` is `n × L` (one curve per row), `y[t]` has length `n`, `z[t]` is
    /// `n × P`.
    pub fn new(
        grid: Grid,
        x: Vec<DMatrix<f64>>,
        y: Vec<DVector<f64>>,
        z: Vec<DMatrix<f64>>,
    ) -> Result<Panel> {
        let periods = x.len();
        if periods == 0 {
            return Err(Error::InvalidPanel("panel has no periods".into()));
        }
        if y.len() != periods || z.len() != periods {
            return Err(Error::InvalidPanel(format!(
                "period counts disagree: curves {}, responses {}, covariates {}",
                periods,
                y.len(),
                z.len()
            )));
        }
        let n = x[0].nrows();
        if n < 2 {
            return Err(Error::InvalidPanel(format!("need at least 2 units, got {n}")));
        }
        let p = z[0].ncols();
        for t in 0..periods {
            let label = t + 1;
            if x[t].nrows() != n || x[t].ncols() != grid.len() {
                return Err(Error::InvalidPanel(format!(
                    "period {label}: curve block is {}x{}, expected {}x{}",
                    x[t].nrows(),
                    x[t].ncols(),
                    n,
                    grid.len()
                )));
            }
            if y[t].len() != n {
                return Err(Error::InvalidPanel(format!(
                    "period {label}: {} responses, expected {n}",
                    y[t].len()
                )));
            }
            if z[t].nrows() != n || z[t].ncols() != p {
                return Err(Error::InvalidPanel(format!(
                    "period {label}: covariate block is {}x{}, expected {n}x{p}",
                    z[t].nrows(),
                    z[t].ncols()
                )));
            }
            let finite = x[t].iter().chain(y[t].iter()).chain(z[t].iter()).all(|v| v.is_finite());
            if !finite {
                return Err(Error::InvalidPanel(format!("period {label}: non-finite value")));
            }
        }
        Ok(Panel { grid, x, y, z })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n_units(&self) -> usize {
        self.x[0].nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.x.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.z[0].ncols()
    }

    /// Curves of period `t` as rows.
    pub fn curves(&self, t: usize) -> &DMatrix<f64> {
        &self.x[t]
    }

    pub fn response(&self, t: usize) -> &DVector<f64> {
        &self.y[t]
    }

    pub fn covariates(&self, t: usize) -> &DMatrix<f64> {
        &self.z[t]
    }

    /// Within-transformed data of period `t`.
    pub fn center_period(&self, t: usize) -> CenteredPeriod {
        CenteredPeriod {
            x: center_columns(&self.x[t]),
            y: {
                let mean = self.y[t].mean();
                self.y[t].map(|v| v - mean)
            },
            z: center_columns(&self.z[t]),
        }
    }
}

fn center_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    let n = m.nrows() as f64;
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    out
}

/// Cross-sectionally centered data of one period.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredPeriod {
    /// `n × L` centered curves.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// `n × P` centered covariates.
    pub z: DMatrix<f64>,
}

/// Removes the period fixed effects by subtracting per-period means over units.
pub fn within_center(panel: &Panel) -> Vec<CenteredPeriod> {
    (0..panel.n_periods()).map(|t| panel.center_period(t)).collect()
}

/// Step-one estimates for a single period.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodFit {
    /// 0-based period index.
    pub t: usize,
    /// Truncation level.
    pub m: usize,
    pub eig: EigenSystem,
    /// Slope coefficients on the first `m` eigenfunctions.
    pub a_hat: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub alpha_hat: Vec<f64>,
    pub sigma_eps: f64,
    /// Variance-scaled slope on the first `m_lower` components; empty until
    /// [`scale_alpha`] runs.
    pub alpha_delta: Vec<f64>,
}

/// Step-one output for the whole panel.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOneFit {
    pub fits: Vec<PeriodFit>,
    /// Smallest truncation level over periods.
    pub m_lower: usize,
}

impl StepOneFit {
    pub fn n_periods(&self) -> usize {
        self.fits.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepOneConfig {
    pub truncation: Truncation,
}

/// Ordinary least squares via Householder QR. Fails with the names of the
/// offending columns if the design is (numerically) rank deficient.
pub(crate) fn least_squares(
    design: &DMatrix<f64>,
    rhs: &DVector<f64>,
    names: &dyn Fn(usize) -> String,
) -> Result<DVector<f64>> {
    let (rows, cols) = design.shape();
    if cols == 0 {
        return Ok(DVector::zeros(0));
    }
    if rows < cols {
        return Err(Error::RankDeficient {
            columns: (rows..cols).map(names).collect(),
        });
    }
    let qr = design.clone().qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..cols).map(|j| r[(j, j)].abs()).collect();
    let largest = diag.iter().copied().fold(0.0, f64::max);
    let bad: Vec<String> = diag
        .iter()
        .enumerate()
        .filter(|(_, &d)| !(d > RANK_TOLERANCE * largest))
        .map(|(j, _)| names(j))
        .collect();
    if !bad.is_empty() {
        return Err(Error::RankDeficient { columns: bad });
    }
    let qty = qr.q().tr_mul(rhs);
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient {
            columns: (0..cols).map(names).collect(),
        })?;
    Ok(coef)
}

/// `ξ_ij = ⟨X_i, φ_j⟩` for the rows of `curves` and the first `m`
/// eigenfunctions.
pub(crate) fn score_matrix(curves: &DMatrix<f64>, eig: &EigenSystem, grid: &Grid, m: usize) -> DMatrix<f64> {
    let l = grid.len();
    let weighted_phi = DMatrix::from_fn(l, m, |row, j| grid.weights()[row] * eig.eigenfunctions[j][row]);
    curves * weighted_phi
}

/// Fits period `t`: FPCA of the centered curves, truncation, and joint least
/// squares of the centered response on `[scores | centered covariates]`.
pub fn fit_period(panel: &Panel, t: usize, truncation: &Truncation) -> Result<PeriodFit> {
    if t >= panel.n_periods() {
        return Err(Error::InvalidArgument(format!(
            "period index {t} out of range for {} periods",
            panel.n_periods()
        )));
    }
    let grid = panel.grid();
    let centered = panel.center_period(t);
    let n = panel.n_units();
    let p = panel.n_covariates();

    let kernel = empirical_covariance(&centered.x)?;
    let eig = eigen_fpca(&kernel, grid, grid.len())?;
    let m = truncation.select(&eig, n, grid.len())?;

    let scores = score_matrix(&centered.x, &eig, grid, m);
    let mut design = DMatrix::zeros(n, m + p);
    design.columns_mut(0, m).copy_from(&scores);
    design.columns_mut(m, p).copy_from(&centered.z);
    let names = |j: usize| {
        if j < m {
            format!("score{}", j + 1)
        } else {
            format!("z{}", j - m + 1)
        }
    };
    let coef = least_squares(&design, &centered.y, &names)?;
    let a_hat: Vec<f64> = coef.rows(0, m).iter().copied().collect();
    let beta_hat: Vec<f64> = coef.rows(m, p).iter().copied().collect();
    let alpha_hat = eig.combine(&a_hat);

    let mut fit = PeriodFit {
        t,
        m,
        eig,
        a_hat,
        beta_hat,
        alpha_hat,
        sigma_eps: 0.0,
        alpha_delta: Vec::new(),
    };
    fit.sigma_eps = residual_variance(&fit, &centered, grid).sqrt();
    Ok(fit)
}

/// `n^{-1} Σ_i (y_i − ⟨α̂, X_i⟩ − β̂ᵀ z_i)²` on centered data.
pub fn residual_variance(fit: &PeriodFit, centered: &CenteredPeriod, grid: &Grid) -> f64 {
    let n = centered.y.len();
    let mut rss = 0.0;
    for i in 0..n {
        let row: Vec<f64> = centered.x.row(i).iter().copied().collect();
        let functional = grid.dot(&fit.alpha_hat, &row);
        let linear: f64 = fit
            .beta_hat
            .iter()
            .zip(centered.z.row(i).iter())
            .map(|(b, z)| b * z)
            .sum();
        let r = centered.y[i] - functional - linear;
        rss += r * r;
    }
    rss / n as f64
}

/// Computes `m_lower = min_t m_t` and fills every `alpha_delta` with
/// `Σ_{j ≤ m_lower} (λ_j^{1/2} / σ_ε) a_j φ_j`.
pub fn scale_alpha(mut fits: Vec<PeriodFit>) -> Result<StepOneFit> {
    let m_lower = fits
        .iter()
        .map(|f| f.m)
        .min()
        .ok_or_else(|| Error::InvalidArgument("no period fits to scale".into()))?;
    for fit in &mut fits {
        if !(fit.sigma_eps > 0.0) {
            return Err(Error::DegenerateFit { period: fit.t + 1 });
        }
        let coefs: Vec<f64> = (0..m_lower)
            .map(|j| fit.eig.eigenvalues[j].sqrt() / fit.sigma_eps * fit.a_hat[j])
            .collect();
        fit.alpha_delta = fit.eig.combine(&coefs);
    }
    Ok(StepOneFit { fits, m_lower })
}

/// Step one over all periods, then the variance scaling.
pub fn fit_step1(panel: &Panel, config: &StepOneConfig) -> Result<StepOneFit> {
    let fits = (0..panel.n_periods())
        .into_par_iter()
        .map(|t| fit_period(panel, t, &config.truncation).map_err(|e| e.at_period(t + 1)))
        .collect::<Result<Vec<_>>>()?;
    scale_alpha(fits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy_panel(y_rows: &[&[f64]]) -> Panel {
        let grid = Grid::equidistant(3).unwrap();
        let t = y_rows.len();
        let n = y_rows[0].len();
        let x = (0..t)
            .map(|s| DMatrix::from_fn(n, 3, |i, l| ((i + 1) * (l + 2) + s) as f64))
            .collect();
        let y = y_rows.iter().map(|r| DVector::from_column_slice(r)).collect();
        let z = (0..t).map(|_| DMatrix::zeros(n, 0)).collect();
        Panel::new(grid, x, y, z).unwrap()
    }

    #[test]
    fn centering_examples() {
        let panel = toy_panel(&[&[1.0, 3.0], &[2.0, 2.0]]);
        let c = within_center(&panel);
        assert_eq!(c[0].y.as_slice(), &[-1.0, 1.0]);
        assert_eq!(c[1].y.as_slice(), &[0.0, 0.0]);

        let panel = toy_panel(&[&[2.0, 2.0, 5.0]]);
        assert_eq!(panel.center_period(0).y.as_slice(), &[-1.0, -1.0, 2.0]);
    }

    #[test]
    fn constant_curves_center_to_zero() {
        let grid = Grid::equidistant(4).unwrap();
        let f = [0.3, -1.0, 2.0, 7.5];
        let x = vec![DMatrix::from_fn(5, 4, |_, l| f[l])];
        let panel = Panel::new(grid, x, vec![DVector::zeros(5)], vec![DMatrix::zeros(5, 1)]).unwrap();
        assert!(panel.center_period(0).x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn panel_validation() {
        let grid = Grid::equidistant(3).unwrap();
        let one = |n| vec![DMatrix::<f64>::zeros(n, 3)];
        assert!(Panel::new(grid.clone(), one(1), vec![DVector::zeros(1)], vec![DMatrix::zeros(1, 0)]).is_err());
        assert!(Panel::new(grid.clone(), one(3), vec![DVector::zeros(2)], vec![DMatrix::zeros(3, 0)]).is_err());
        assert!(Panel::new(grid.clone(), one(3), vec![DVector::zeros(3)], vec![DMatrix::zeros(2, 1)]).is_err());
        let mut bad = one(3);
        bad[0][(1, 1)] = f64::NAN;
        assert!(Panel::new(grid.clone(), bad, vec![DVector::zeros(3)], vec![DMatrix::zeros(3, 0)]).is_err());
        assert!(Panel::new(grid, vec![], vec![], vec![]).is_err());
    }

    #[test]
    fn least_squares_flags_collinear_columns() {
        let design = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0, -1.0, -2.0]);
        let rhs = DVector::from_column_slice(&[1.0, 2.0, 3.0, 4.0]);
        let err = least_squares(&design, &rhs, &|j| format!("c{j}")).unwrap_err();
        match err {
            Error::RankDeficient { columns } => assert_eq!(columns, vec!["c1".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
        let wide = DMatrix::from_element(1, 2, 1.0);
        assert!(least_squares(&wide, &DVector::from_element(1, 1.0), &|j| format!("c{j}")).is_err());
    }

    #[test]
    fn scale_alpha_unit_example() {
        let grid = Grid::equidistant(5).unwrap();
        let fit = PeriodFit {
            t: 0,
            m: 1,
            eig: EigenSystem {
                eigenvalues: vec![4.0],
                eigenfunctions: vec![vec![1.0; grid.len()]],
            },
            a_hat: vec![1.0],
            beta_hat: vec![],
            alpha_hat: vec![1.0; grid.len()],
            sigma_eps: 2.0,
            alpha_delta: vec![],
        };
        let step1 = scale_alpha(vec![fit]).unwrap();
        assert_eq!(step1.m_lower, 1);
        for v in &step1.fits[0].alpha_delta {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn scale_alpha_uses_smallest_truncation() {
        let phi = |k: f64| vec![k, k, k];
        let mk = |t: usize, m: usize| PeriodFit {
            t,
            m,
            eig: EigenSystem {
                eigenvalues: vec![1.0; 3],
                eigenfunctions: vec![phi(1.0), phi(10.0), phi(100.0)],
            },
            a_hat: vec![1.0; m],
            beta_hat: vec![],
            alpha_hat: vec![0.0; 3],
            sigma_eps: 1.0,
            alpha_delta: vec![],
        };
        let step1 = scale_alpha(vec![mk(0, 2), mk(1, 3)]).unwrap();
        assert_eq!(step1.m_lower, 2);
        for f in &step1.fits {
            assert_eq!(f.alpha_delta, vec![11.0; 3]);
        }
    }

    #[test]
    fn degenerate_period_is_an_error() {
        let fit = PeriodFit {
            t: 4,
            m: 1,
            eig: EigenSystem {
                eigenvalues: vec![1.0],
                eigenfunctions: vec![vec![1.0; 2]],
            },
            a_hat: vec![1.0],
            beta_hat: vec![],
            alpha_hat: vec![1.0; 2],
            sigma_eps: 0.0,
            alpha_delta: vec![],
        };
        assert!(matches!(scale_alpha(vec![fit]), Err(Error::DegenerateFit { period: 5 })));
    }
}
