//! Unsupervised classification of periods into regimes.
//!
//! The primary rule compares variance-scaled slope estimates pairwise and
//! grows regimes around pivot periods with a chi-squared based threshold.
//! A Caliński–Harabasz k-means estimate bounds the number of regimes, and a
//! diagonal Gaussian mixture on the raw slope coefficients is available as
//! an alternative classifier.

mod gmm;
mod kmeans;

use serde::{Deserialize, Serialize};

pub use gmm::{classify_gmm, fit_gmm, EmConfig, GmmFit};
pub use kmeans::{calinski_harabasz, kmax_calinski_harabasz, kmeans, KMeansConfig, KMeansFit};

use crate::chi2::chi2_quantile;
use crate::error::{Error, Result};
use crate::fpca::Grid;
use crate::panel::StepOneFit;

/// Default probability level of the threshold quantile.
pub const DEFAULT_P_TAU: f64 = 0.99;

/// Symmetric matrix of squared L² distances between scaled period slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    size: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    /// Builds a matrix from row-major values; symmetrizes and zeroes the
    /// diagonal.
    pub fn from_row_major(size: usize, mut values: Vec<f64>) -> Result<DistanceMatrix> {
        if values.len() != size * size {
            return Err(Error::LengthMismatch {
                expected: size * size,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(
                "distances must be finite and nonnegative".into(),
            ));
        }
        for i in 0..size {
            values[i * size + i] = 0.0;
            for j in i + 1..size {
                let avg = 0.5 * (values[i * size + j] + values[j * size + i]);
                values[i * size + j] = avg;
                values[j * size + i] = avg;
            }
        }
        Ok(DistanceMatrix { size, values })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, t: usize, s: usize) -> f64 {
        self.values[t * self.size + s]
    }

    /// Matrix with periods relabeled: entry `(a, b)` of the result is entry
    /// `(perm[a], perm[b])` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> DistanceMatrix {
        let n = self.size;
        let mut values = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                values[a * n + b] = self.get(perm[a], perm[b]);
            }
        }
        DistanceMatrix { size: n, values }
    }
}

/// `Δ_ts = ‖α_t^(Δ) − α_s^(Δ)‖²` for every pair of periods.
pub fn delta_matrix(step1: &StepOneFit, grid: &Grid) -> Result<DistanceMatrix> {
    let t_count = step1.n_periods();
    for fit in &step1.fits {
        if fit.alpha_delta.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: fit.alpha_delta.len(),
            });
        }
    }
    let mut values = vec![0.0; t_count * t_count];
    for t in 0..t_count {
        for s in t + 1..t_count {
            let d = grid.dist_sq(&step1.fits[t].alpha_delta, &step1.fits[s].alpha_delta);
            values[t * t_count + s] = d;
            values[s * t_count + t] = d;
        }
    }
    Ok(DistanceMatrix {
        size: t_count,
        values,
    })
}

/// `τ = (2/n) · F^{-1}_{χ²(m_lower)}(p_τ)`.
pub fn threshold_tau(n: usize, m_lower: usize, p_tau: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need n >= 2, got {n}")));
    }
    let df = u32::try_from(m_lower)
        .map_err(|_| Error::InvalidArgument(format!("truncation {m_lower} too large")))?;
    Ok(2.0 / n as f64 * chi2_quantile(df, p_tau)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierMethod {
    Threshold,
    Gmm,
    /// Partition supplied by the caller (e.g. the true regimes).
    Supplied,
}

/// Disjoint regimes covering periods `0..T`, listed in order of their
/// smallest member; members ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimePartition {
    pub regimes: Vec<Vec<usize>>,
    pub method: ClassifierMethod,
    pub tau: Option<f64>,
    pub k_max: usize,
}

impl RegimePartition {
    /// Validates and normalizes an explicit partition of `0..n_periods`.
    pub fn new(
        mut regimes: Vec<Vec<usize>>,
        n_periods: usize,
        method: ClassifierMethod,
        tau: Option<f64>,
        k_max: usize,
    ) -> Result<RegimePartition> {
        let mut seen = vec![false; n_periods];
        for regime in &mut regimes {
            if regime.is_empty() {
                return Err(Error::InvalidArgument("empty regime".into()));
            }
            regime.sort_unstable();
            for &t in regime.iter() {
                if t >= n_periods {
                    return Err(Error::InvalidArgument(format!(
                        "period {t} out of range for {n_periods} periods"
                    )));
                }
                if seen[t] {
                    return Err(Error::InvalidArgument(format!("period {t} in two regimes")));
                }
                seen[t] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidArgument(format!("period {missing} not assigned")));
        }
        regimes.sort_by_key(|r| r[0]);
        Ok(RegimePartition {
            regimes,
            method,
            tau,
            k_max,
        })
    }

    /// Partition from per-period labels; label values only matter up to
    /// equality.
    pub fn from_labels(labels: &[usize], method: ClassifierMethod, tau: Option<f64>, k_max: usize) -> RegimePartition {
        let mut order: Vec<usize> = Vec::new();
        let mut regimes: Vec<Vec<usize>> = Vec::new();
        for (t, &label) in labels.iter().enumerate() {
            match order.iter().position(|&l| l == label) {
                Some(k) => regimes[k].push(t),
                None => {
                    order.push(label);
                    regimes.push(vec![t]);
                }
            }
        }
        RegimePartition {
            regimes,
            method,
            tau,
            k_max,
        }
    }

    pub fn k_hat(&self) -> usize {
        self.regimes.len()
    }

    pub fn n_periods(&self) -> usize {
        self.regimes.iter().map(Vec::len).sum()
    }

    /// Regime index of every period.
    pub fn labels(&self) -> Vec<usize> {
        let mut labels = vec![usize::MAX; self.n_periods()];
        for (k, regime) in self.regimes.iter().enumerate() {
            for &t in regime {
                labels[t] = k;
            }
        }
        labels
    }

    /// True when both partitions group the periods identically.
    pub fn same_grouping(&self, other: &RegimePartition) -> bool {
        self.regimes == other.regimes
    }
}

/// Threshold classification: repeatedly take the smallest unclassified
/// period as pivot and collect every unclassified period within `tau` of it.
/// After `k_max − 1` regimes the remaining periods form the last regime.
pub fn classify_threshold(delta: &DistanceMatrix, tau: f64, k_max: usize) -> Result<RegimePartition> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {tau}")));
    }
    if k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be at least 1".into()));
    }
    let mut remaining: Vec<usize> = (0..delta.size()).collect();
    let mut regimes = Vec::new();
    while !remaining.is_empty() {
        if regimes.len() + 1 == k_max {
            regimes.push(std::mem::take(&mut remaining));
            break;
        }
        let pivot = remaining[0];
        let (joined, rest): (Vec<usize>, Vec<usize>) =
            remaining.iter().partition(|&&s| delta.get(pivot, s) <= tau);
        regimes.push(joined);
        remaining = rest;
    }
    Ok(RegimePartition {
        regimes,
        method: ClassifierMethod::Threshold,
        tau: Some(tau),
        k_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fpca::EigenSystem;
    use crate::panel::PeriodFit;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn block_matrix(labels: &[usize], within: f64, across: f64) -> DistanceMatrix {
        let n = labels.len();
        let values = (0..n * n)
            .map(|idx| {
                let (a, b) = (idx / n, idx % n);
                if labels[a] == labels[b] {
                    within
                } else {
                    across
                }
            })
            .collect();
        DistanceMatrix::from_row_major(n, values).unwrap()
    }

    fn step1_from_curves(curves: Vec<Vec<f64>>) -> StepOneFit {
        let fits = curves
            .into_iter()
            .enumerate()
            .map(|(t, c)| PeriodFit {
                t,
                m: 1,
                eig: EigenSystem {
                    eigenvalues: vec![1.0],
                    eigenfunctions: vec![vec![1.0; c.len()]],
                },
                a_hat: vec![0.0],
                beta_hat: vec![],
                alpha_hat: c.clone(),
                sigma_eps: 1.0,
                alpha_delta: c,
            })
            .collect();
        StepOneFit { fits, m_lower: 1 }
    }

    #[test]
    fn delta_examples() {
        let grid = Grid::equidistant(201).unwrap();
        let same = step1_from_curves(vec![grid.eval(|u| u); 3]);
        let d = delta_matrix(&same, &grid).unwrap();
        assert!((0..3).all(|t| (0..3).all(|s| d.get(t, s) == 0.0)));

        let pair = step1_from_curves(vec![vec![0.0; 201], vec![1.0; 201], grid.eval(|u| u)]);
        let d = delta_matrix(&pair, &grid).unwrap();
        assert_abs_diff_eq!(d.get(0, 1), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.get(2, 0), 1.0 / 3.0, epsilon = 1e-4);
        assert_eq!(d.get(0, 2), d.get(2, 0));
    }

    #[test]
    fn tau_examples() {
        assert_abs_diff_eq!(threshold_tau(100, 2, 0.99).unwrap(), 0.184207, epsilon = 1e-5);
        assert_abs_diff_eq!(threshold_tau(50, 2, 0.99).unwrap(), 0.368414, epsilon = 1e-5);
        assert_abs_diff_eq!(threshold_tau(100, 3, 0.99).unwrap(), 0.226898, epsilon = 1e-4);
        assert!(threshold_tau(1, 2, 0.99).is_err());
        assert!(threshold_tau(10, 0, 0.99).is_err());
    }

    #[test]
    fn tau_monotonicity() {
        let base = threshold_tau(100, 3, 0.99).unwrap();
        assert!(threshold_tau(101, 3, 0.99).unwrap() < base);
        assert!(threshold_tau(100, 4, 0.99).unwrap() > base);
        assert!(threshold_tau(100, 3, 0.995).unwrap() > base);
    }

    #[test]
    fn single_regime_when_everything_is_close() {
        let d = block_matrix(&[0, 0, 0, 0, 0], 0.1, 0.1);
        let p = classify_threshold(&d, 0.5, 10).unwrap();
        assert_eq!(p.regimes, vec![vec![0, 1, 2, 3, 4]]);
        assert_eq!(p.k_hat(), 1);
    }

    #[test]
    fn two_blocks() {
        let d = block_matrix(&[0, 0, 1, 1], 0.01, 5.0);
        let p = classify_threshold(&d, 0.5, 10).unwrap();
        assert_eq!(p.regimes, vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn k_max_stop_rule() {
        let d = block_matrix(&[0, 0, 1, 1, 2, 2], 0.01, 5.0);
        let p = classify_threshold(&d, 0.5, 2).unwrap();
        assert_eq!(p.regimes, vec![vec![0, 1], vec![2, 3, 4, 5]]);
        let p = classify_threshold(&d, 0.5, 1).unwrap();
        assert_eq!(p.regimes, vec![vec![0, 1, 2, 3, 4, 5]]);
        assert!(classify_threshold(&d, 0.0, 3).is_err());
        assert!(classify_threshold(&d, 0.5, 0).is_err());
    }

    #[test]
    fn partition_validation() {
        use ClassifierMethod::Supplied;
        assert!(RegimePartition::new(vec![vec![0, 1], vec![2]], 3, Supplied, None, 3).is_ok());
        assert!(RegimePartition::new(vec![vec![0, 1], vec![1, 2]], 3, Supplied, None, 3).is_err());
        assert!(RegimePartition::new(vec![vec![0], vec![2]], 3, Supplied, None, 3).is_err());
        assert!(RegimePartition::new(vec![vec![0, 1, 2], vec![]], 3, Supplied, None, 3).is_err());
        assert!(RegimePartition::new(vec![vec![0, 5]], 3, Supplied, None, 3).is_err());
        let p = RegimePartition::new(vec![vec![2, 1], vec![0]], 3, Supplied, None, 3).unwrap();
        assert_eq!(p.regimes, vec![vec![0], vec![1, 2]]);
        let q = RegimePartition::from_labels(&[7, 3, 3], Supplied, None, 3);
        assert!(p.same_grouping(&q));
        assert_eq!(q.labels(), vec![0, 1, 1]);
    }

    fn assert_partition(p: &RegimePartition, n: usize) {
        let mut all: Vec<usize> = p.regimes.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
        assert!(p.regimes.iter().all(|r| !r.is_empty()));
        assert!(p.k_hat() <= p.k_max);
    }

    proptest! {
        #[test]
        fn threshold_output_is_a_partition(
            n in 1usize..25,
            seed in proptest::collection::vec(0.0f64..2.0, 625),
            tau in 0.05f64..1.5,
            k_max in 1usize..8,
        ) {
            let values: Vec<f64> = seed[..n * n].to_vec();
            let d = DistanceMatrix::from_row_major(n, values).unwrap();
            let p = classify_threshold(&d, tau, k_max).unwrap();
            assert_partition(&p, n);
        }

        #[test]
        fn exact_recovery_of_separated_blocks(
            labels in proptest::collection::vec(0usize..4, 2..30),
            within in proptest::collection::vec(0.0f64..0.4, 900),
            across in proptest::collection::vec(0.6f64..3.0, 900),
        ) {
            let n = labels.len();
            let values = (0..n * n).map(|idx| {
                let (a, b) = (idx / n, idx % n);
                if labels[a] == labels[b] { within[idx] } else { across[idx] }
            }).collect();
            let d = DistanceMatrix::from_row_major(n, values).unwrap();
            let p = classify_threshold(&d, 0.5, 4).unwrap();
            let truth = RegimePartition::from_labels(&labels, ClassifierMethod::Supplied, None, 4);
            prop_assert!(p.same_grouping(&truth));
        }

        #[test]
        fn relabeling_periods_permutes_the_partition(
            labels in proptest::collection::vec(0usize..3, 2..20),
            noise in proptest::collection::vec(0.0f64..0.3, 400),
            shuffle in proptest::collection::vec(any::<u32>(), 20),
        ) {
            let n = labels.len();
            let values = (0..n * n).map(|idx| {
                let (a, b) = (idx / n, idx % n);
                if labels[a] == labels[b] { noise[idx] } else { 2.0 + noise[idx] }
            }).collect();
            let d = DistanceMatrix::from_row_major(n, values).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.sort_by_key(|&i| (shuffle[i], i));
            let base = classify_threshold(&d, 1.0, 10).unwrap();
            let moved = classify_threshold(&d.permuted(&perm), 1.0, 10).unwrap();
            // Period a of the permuted problem is period perm[a] of the original.
            let mapped: Vec<Vec<usize>> = moved.regimes.iter()
                .map(|r| r.iter().map(|&a| perm[a]).collect())
                .collect();
            let mapped = RegimePartition::new(mapped, n, ClassifierMethod::Supplied, None, 10).unwrap();
            prop_assert!(mapped.same_grouping(&base));
        }
    }
}
