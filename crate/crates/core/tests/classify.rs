use funcregime::classify::{
    classify_gmm, classify_threshold, fit_gmm, kmax_calinski_harabasz, threshold_tau, ClassifierMethod,
    DistanceMatrix, EmConfig, KMeansConfig,
};
use funcregime::{chi2_cdf, chi2_quantile, EigenSystem, Grid, PeriodFit, StepOneFit};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Step-one output whose scaled slopes are the constants `levels` and whose
/// coefficient vectors are `coefs`.
fn fake_step1(levels: &[f64], coefs: &[Vec<f64>], grid: &Grid) -> StepOneFit {
    let m = coefs[0].len();
    let eig = EigenSystem {
        eigenvalues: (0..m).map(|j| 1.0 / (j + 1) as f64).collect(),
        eigenfunctions: (0..m).map(|j| grid.eval(|u| (j as f64 * u + 1.0).cos())).collect(),
    };
    let fits = levels
        .iter()
        .zip(coefs)
        .enumerate()
        .map(|(t, (&v, a))| PeriodFit {
            t,
            m,
            eig: eig.clone(),
            a_hat: a.clone(),
            beta_hat: vec![],
            alpha_hat: vec![v; grid.len()],
            sigma_eps: 1.0,
            alpha_delta: vec![v; grid.len()],
        })
        .collect();
    StepOneFit { fits, m_lower: m }
}

fn sse(values: &[f64]) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum()
}

/// Exhaustive Caliński–Harabasz maximizer for sorted 1-D data; the optimal
/// k-means partition of sorted scalars is contiguous.
fn brute_force_kmax(sorted: &[f64], k_top: usize) -> usize {
    let t = sorted.len();
    let total = sse(sorted);
    let mut best = (1, f64::NEG_INFINITY);
    for k in 2..=k_top.min(t - 1) {
        let mut within = f64::INFINITY;
        // Choose k − 1 cut positions among 1..t.
        let mut cuts: Vec<usize> = (1..k).collect();
        loop {
            let mut bounds = vec![0];
            bounds.extend(&cuts);
            bounds.push(t);
            let w: f64 = bounds.windows(2).map(|b| sse(&sorted[b[0]..b[1]])).sum();
            within = within.min(w);
            // Next combination.
            let mut i = k - 1;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                if cuts[i] < t - (k - 1 - i) {
                    cuts[i] += 1;
                    for j in i + 1..k - 1 {
                        cuts[j] = cuts[j - 1] + 1;
                    }
                    break;
                }
                if i == 0 {
                    i = usize::MAX;
                    break;
                }
            }
            if i == usize::MAX || (i == 0 && cuts[0] > t - (k - 1)) {
                break;
            }
            if cuts.iter().any(|&c| c >= t) {
                break;
            }
        }
        let ch = ((total - within) / (k as f64 - 1.0)) / (within / (t - k) as f64);
        if ch > best.1 {
            best = (k, ch);
        }
    }
    best.0
}

fn kmax_for(values: &[f64], k_top: usize) -> usize {
    let grid = Grid::equidistant(11).unwrap();
    let coefs: Vec<Vec<f64>> = values.iter().map(|v| vec![*v]).collect();
    kmax_calinski_harabasz(&fake_step1(values, &coefs, &grid), &grid, 101, k_top, &KMeansConfig::default()).unwrap()
}

#[test]
fn ch_two_tight_groups() {
    let v = [0.0, 0.0, 0.0, 10.0, 10.0, 10.0];
    assert_eq!(brute_force_kmax(&v, 5), 2);
    assert_eq!(kmax_for(&v, 5), 2);
}

#[test]
fn ch_three_groups_of_four() {
    // Groups of coincident points: any spread inside a group of four lets
    // finer splits win the index when k may go up to T − 1.
    let v = [0.0, 0.0, 0.0, 0.0, 10.0, 10.0, 10.0, 10.0, 20.0, 20.0, 20.0, 20.0];
    assert_eq!(brute_force_kmax(&v, 11), 3);
    let shuffled = [10.0, 0.0, 20.0, 0.0, 20.0, 10.0, 0.0, 10.0, 20.0, 0.0, 20.0, 10.0];
    assert_eq!(kmax_for(&shuffled, 11), 3);
}

#[test]
fn ch_prefers_fine_splits_of_spread_groups() {
    let v = [0.0, 0.1, 0.2, 0.3, 10.0, 10.1, 10.2, 10.3, 20.0, 20.1, 20.2, 20.3];
    let oracle = brute_force_kmax(&v, 11);
    assert!(oracle > 3);
    assert_eq!(kmax_for(&v, 11), oracle);
    assert_eq!(kmax_for(&v, 3), 3);
}

#[test]
fn ch_matches_brute_force_on_spread_data() {
    let v: Vec<f64> = (0..9).map(|i| ((i * i) as f64 * 0.37).sin() * 3.0 + (i / 3) as f64 * 4.0).collect();
    let mut sorted = v.clone();
    sorted.sort_by(f64::total_cmp);
    assert_eq!(kmax_for(&v, 8), brute_force_kmax(&sorted, 8));
}

#[test]
fn ch_identical_points() {
    assert_eq!(kmax_for(&[2.0; 7], 6), 1);
}

#[test]
fn chi2_agrees_with_reference_implementation() {
    for df in 1..=12u32 {
        let reference = ChiSquared::new(df as f64).unwrap();
        for &p in &[0.001, 0.05, 0.3, 0.5, 0.9, 0.99, 0.999] {
            let q = chi2_quantile(df, p).unwrap();
            let want = reference.inverse_cdf(p);
            assert!((q - want).abs() < 1e-6 * want.max(1.0), "df {df} p {p}: {q} vs {want}");
            assert!((chi2_cdf(df, q).unwrap() - reference.cdf(q)).abs() < 1e-10);
        }
    }
}

#[test]
fn tau_matches_definition() {
    let q = ChiSquared::new(3.0).unwrap().inverse_cdf(0.99);
    assert!((threshold_tau(100, 3, 0.99).unwrap() - 2.0 * q / 100.0).abs() < 1e-8);
}

#[test]
fn threshold_recovers_interleaved_blocks() {
    // Regimes {0, 3}, {1, 4}, {2, 5}: not contiguous in time.
    let label = [0, 1, 2, 0, 1, 2];
    let values: Vec<f64> = (0..36)
        .map(|i| if label[i / 6] == label[i % 6] { 0.01 } else { 4.0 })
        .collect();
    let delta = DistanceMatrix::from_row_major(6, values).unwrap();
    let p = classify_threshold(&delta, 0.5, 10).unwrap();
    assert_eq!(p.regimes, vec![vec![0, 3], vec![1, 4], vec![2, 5]]);
    assert_eq!(p.method, ClassifierMethod::Threshold);
    assert_eq!(p.tau, Some(0.5));
}

fn diag_gaussian_loglik(points: &[Vec<f64>], groups: &[Vec<usize>]) -> f64 {
    let n = points.len() as f64;
    let dim = points[0].len();
    let mut ll = 0.0;
    for g in groups {
        let w = g.len() as f64 / n;
        for d in 0..dim {
            let vals: Vec<f64> = g.iter().map(|&i| points[i][d]).collect();
            let var = sse(&vals) / vals.len() as f64;
            ll += -0.5 * vals.len() as f64 * ((2.0 * std::f64::consts::PI * var).ln() + 1.0);
        }
        ll += g.len() as f64 * w.ln();
    }
    ll
}

#[test]
fn gmm_two_separated_clusters() {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let noise = Normal::new(0.0, 0.2).unwrap();
    let mut points = Vec::new();
    for _ in 0..10 {
        points.push(vec![noise.sample(&mut rng), noise.sample(&mut rng)]);
        points.push(vec![20.0 + noise.sample(&mut rng), -15.0 + noise.sample(&mut rng)]);
    }
    let even: Vec<usize> = (0..20).step_by(2).collect();
    let odd: Vec<usize> = (1..20).step_by(2).collect();
    let ln_t = 20f64.ln();
    let bic = |ll: f64, k: usize| -2.0 * ll + ((k - 1) + 4 * k) as f64 * ln_t;
    let bic1 = bic(diag_gaussian_loglik(&points, &[(0..20).collect()]), 1);
    let ll2 = diag_gaussian_loglik(&points, &[even.clone(), odd.clone()]);
    let bic2 = bic(ll2, 2);
    assert!(bic2 < bic1);

    let cfg = EmConfig::default();
    let fit2 = fit_gmm(&points, 2, &cfg).unwrap().unwrap();
    assert!((fit2.loglik - ll2).abs() < 1e-6 * ll2.abs(), "{} vs {ll2}", fit2.loglik);
    assert!((fit2.bic - bic2).abs() < 1e-5 * bic2.abs());
    let fit1 = fit_gmm(&points, 1, &cfg).unwrap().unwrap();
    assert!((fit1.bic - bic1).abs() < 1e-8 * bic1.abs());
    if let Some(fit3) = fit_gmm(&points, 3, &cfg).unwrap() {
        assert!(fit3.bic > fit2.bic);
    }

    let grid = Grid::equidistant(11).unwrap();
    let step1 = fake_step1(&[0.0; 20], &points, &grid);
    let p = classify_gmm(&step1, &grid, 5, &cfg).unwrap();
    assert_eq!(p.regimes, vec![even, odd]);
}

#[test]
fn gmm_identical_vectors_give_one_regime() {
    let grid = Grid::equidistant(11).unwrap();
    let points = vec![vec![1.5, -0.5]; 12];
    let step1 = fake_step1(&[0.0; 12], &points, &grid);
    let p = classify_gmm(&step1, &grid, 4, &EmConfig::default()).unwrap();
    assert_eq!(p.k_hat(), 1);
}
