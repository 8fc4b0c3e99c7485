#![allow(dead_code)]

use funcregime::sim::{basis_function, score_variance, BASIS_SIZE};
use funcregime::{Grid, Panel, PeriodFit};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `n` curves of the sine-basis process (rows) on `grid`.
pub fn sine_curves(n: usize, grid: &Grid, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let basis = DMatrix::from_fn(BASIS_SIZE, grid.len(), |j, c| basis_function(j + 1, grid.points()[c]));
    let scores = DMatrix::from_fn(n, BASIS_SIZE, |_, j| normal(rng) * score_variance(j + 1).sqrt());
    scores * basis
}

/// Subtracts the column means.
pub fn center_rows(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = x.row_mean();
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        row -= &mean;
    }
    out
}

/// Trapezoid weights written out independently of the library.
pub fn trapezoid(points: &[f64]) -> Vec<f64> {
    let l = points.len();
    (0..l)
        .map(|a| {
            let left = if a > 0 { points[a] - points[a - 1] } else { 0.0 };
            let right = if a + 1 < l { points[a + 1] - points[a] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

pub fn quad(f: &[f64], g: &[f64], w: &[f64]) -> f64 {
    f.iter().zip(g).zip(w).map(|((a, b), c)| a * b * c).sum()
}

/// Response `y_i = <x_i, slope> + beta·z_i + rho + eps_i` with the trapezoid rule.
pub fn response(
    x: &DMatrix<f64>,
    slope: &[f64],
    z: &DMatrix<f64>,
    beta: &[f64],
    rho: f64,
    noise_sd: f64,
    grid: &Grid,
    rng: &mut ChaCha8Rng,
) -> DVector<f64> {
    let w = trapezoid(grid.points());
    DVector::from_fn(x.nrows(), |i, _| {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        let lin: f64 = (0..z.ncols()).map(|p| beta[p] * z[(i, p)]).sum();
        quad(&row, slope, &w) + lin + rho + noise_sd * normal(rng)
    })
}

/// Random panel with `p` covariates, a smooth slope and unit noise.
pub fn random_panel(n: usize, periods: usize, p: usize, l: usize, seed: u64) -> Panel {
    let grid = Grid::equidistant(l).unwrap();
    let mut r = rng(seed);
    let slope = grid.eval(|u| 2.0 * (3.0 * u).sin() - u);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut zs = Vec::new();
    for t in 0..periods {
        let x = sine_curves(n, &grid, &mut r);
        let z = DMatrix::from_fn(n, p, |_, _| normal(&mut r));
        let beta: Vec<f64> = (0..p).map(|q| 1.0 + q as f64 - 0.3 * t as f64).collect();
        let y = response(&x, &slope, &z, &beta, 0.5 * t as f64, 1.0, &grid, &mut r);
        xs.push(x);
        ys.push(y);
        zs.push(z);
    }
    Panel::new(grid, xs, ys, zs).unwrap()
}

/// Partitioned closed form `[K_z − Φ(K_zX)]^{-1} [K_zy − Φ(K_yX)]` for the
/// slope of the scalar covariates, from the eigenpairs of a period fit.
pub fn closed_form_beta(panel: &Panel, t: usize, fit: &PeriodFit) -> DVector<f64> {
    let grid = panel.grid();
    let w = trapezoid(grid.points());
    let n = panel.n_units() as f64;
    let xc = center_rows(panel.curves(t));
    let zc = center_rows(panel.covariates(t));
    let y = panel.response(t);
    let yc = y.add_scalar(-y.mean());
    let p = zc.ncols();
    let l = grid.len();

    // Cross-covariance functions K_{z_p X}(s) and K_{yX}(s).
    let kzx: Vec<Vec<f64>> = (0..p)
        .map(|q| (0..l).map(|s| (0..xc.nrows()).map(|i| zc[(i, q)] * xc[(i, s)]).sum::<f64>() / n).collect())
        .collect();
    let kyx: Vec<f64> = (0..l).map(|s| (0..xc.nrows()).map(|i| yc[i] * xc[(i, s)]).sum::<f64>() / n).collect();
    let kz = zc.transpose() * &zc / n;
    let kzy = zc.transpose() * &yc / n;

    let phi = |q: usize, g: &[f64]| -> f64 {
        (0..fit.m)
            .map(|j| {
                let f = &fit.eig.eigenfunctions[j];
                quad(&kzx[q], f, &w) * quad(f, g, &w) / fit.eig.eigenvalues[j]
            })
            .sum()
    };
    let b = DMatrix::from_fn(p, p, |q, r| kz[(q, r)] - phi(q, &kzx[r]));
    let rhs = DVector::from_fn(p, |q, _| kzy[q] - phi(q, &kyx));
    b.lu().solve(&rhs).expect("invertible partitioned system")
}
