use crate::classify::RegimePartition;
use crate::error::{Error, Result};
use crate::fpca::Grid;

/// Maximum-weight assignment on a rectangular `rows × cols` weight matrix.
/// Returns, for every row, the matched column (if any). Hungarian method on
/// the square cost matrix padded with zeros.
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    let size = rows.max(cols);
    if size == 0 {
        return Vec::new();
    }
    let max_w = weights.iter().flatten().copied().fold(0.0, f64::max);
    let cost = |i: usize, j: usize| {
        let w = if i < rows && j < cols { weights[i][j] } else { 0.0 };
        max_w - w
    };
    // 1-based potentials formulation; p[j] = row assigned to column j.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; size + 1];
    let mut v = vec![0.0; size + 1];
    let mut p = vec![0usize; size + 1];
    let mut way = vec![0usize; size + 1];
    for i in 1..=size {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; size + 1];
        let mut used = vec![false; size + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=size {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=size {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; rows];
    for j in 1..=size {
        let i = p[j];
        if i >= 1 && i <= rows && j <= cols {
            out[i - 1] = Some(j - 1);
        }
    }
    out
}

/// `overlap[a][b]` = number of periods in estimated regime `a` and true
/// regime `b`.
pub fn confusion(est: &RegimePartition, truth: &RegimePartition) -> Vec<Vec<f64>> {
    let true_labels = truth.labels();
    est.regimes
        .iter()
        .map(|members| {
            let mut row = vec![0.0; truth.k_hat()];
            for &t in members {
                row[true_labels[t]] += 1.0;
            }
            row
        })
        .collect()
}

/// Best injective matching of estimated to true regimes (maximum total
/// overlap); `matching[a]` is the true regime of estimated regime `a`.
pub fn align_regimes(est: &RegimePartition, truth: &RegimePartition) -> Vec<Option<usize>> {
    max_weight_assignment(&confusion(est, truth))
}

/// Share of periods not covered by the optimal regime matching.
pub fn classification_error(est: &RegimePartition, truth: &RegimePartition) -> Result<f64> {
    let periods = truth.n_periods();
    if est.n_periods() != periods {
        return Err(Error::InvalidArgument(format!(
            "estimated partition covers {} periods, truth {periods}",
            est.n_periods()
        )));
    }
    let overlap = confusion(est, truth);
    let matched: f64 = max_weight_assignment(&overlap)
        .iter()
        .enumerate()
        .filter_map(|(a, b)| b.map(|b| overlap[a][b]))
        .sum();
    Ok(1.0 - matched / periods as f64)
}

/// `‖estimate − truth‖² / ‖truth‖²` under the grid quadrature.
pub fn relative_l2_error(estimate: &[f64], truth: &[f64], grid: &Grid) -> Result<f64> {
    let denom = crate::fpca::norm_sq(truth, grid)?;
    if !(denom > 0.0) {
        return Err(Error::InvalidArgument("reference curve has zero norm".into()));
    }
    if estimate.len() != grid.len() {
        return Err(Error::LengthMismatch {
            expected: grid.len(),
            got: estimate.len(),
        });
    }
    Ok(grid.dist_sq(estimate, truth) / denom)
}
