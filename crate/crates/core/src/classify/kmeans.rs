use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpca::Grid;
use crate::panel::StepOneFit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            restarts: 10,
            max_iter: 300,
            seed: 0x6b6d_6561_6e73,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares.
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut dists: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dists.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, d) in dists.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[idx].clone());
        for (d, p) in dists.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iter: usize) -> KMeansFit {
    let k = centroids.len();
    let dim = points[0].len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        for (label, p) in labels.iter_mut().zip(points) {
            let (j, _) = nearest(p, &centroids);
            if *label != j {
                *label = j;
                changed = true;
            }
        }
        // Re-seed empty clusters from the point farthest from its centroid.
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let far = (0..points.len())
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&a, &b| {
                    sq_dist(&points[a], &centroids[labels[a]])
                        .total_cmp(&sq_dist(&points[b], &centroids[labels[b]]))
                });
            if let Some(i) = far {
                counts[labels[i]] -= 1;
                labels[i] = j;
                counts[j] = 1;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        for (l, p) in labels.iter().zip(points) {
            for (s, v) in sums[*l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = labels
        .iter()
        .zip(points)
        .map(|(l, p)| sq_dist(p, &centroids[*l]))
        .sum();
    KMeansFit {
        labels,
        centroids,
        inertia,
    }
}

/// Lloyd's k-means with k-means++ seeding; the best of `config.restarts`
/// runs (lowest inertia, earliest on ties) is returned.
pub fn kmeans(points: &[Vec<f64>], k: usize, config: &KMeansConfig) -> Result<KMeansFit> {
    if k == 0 || k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "k-means needs 1 <= k <= {} points, got k = {k}",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::InvalidArgument("k-means points differ in dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(k as u64);
    let mut best: Option<KMeansFit> = None;
    for _ in 0..config.restarts.max(1) {
        let init = plus_plus_init(points, k, &mut rng);
        let fit = lloyd(points, init, config.max_iter);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Caliński–Harabasz index `[B/(k−1)] / [W/(T−k)]` with between-scatter
/// `B = Σ_j |C_j| ‖c_j − v̄‖²` and within-scatter `W = Σ_j Σ_{t∈C_j} ‖v_t − c_j‖²`.
pub fn calinski_harabasz(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let t = points.len();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let dim = points[0].len();
    let mut centroids = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (l, p) in labels.iter().zip(points) {
        counts[*l] += 1;
        for (c, v) in centroids[*l].iter_mut().zip(p) {
            *c += v;
        }
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        if n > 0 {
            c.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    let used = counts.iter().filter(|&&n| n > 0).count();
    let mean: Vec<f64> = (0..dim)
        .map(|d| points.iter().map(|p| p[d]).sum::<f64>() / t as f64)
        .collect();
    let between: f64 = centroids
        .iter()
        .zip(&counts)
        .map(|(c, &n)| n as f64 * sq_dist(c, &mean))
        .sum();
    let within: f64 = labels
        .iter()
        .zip(points)
        .map(|(l, p)| sq_dist(p, &centroids[*l]))
        .sum();
    (between / (used as f64 - 1.0)) / (within / (t as f64 - used as f64))
}

/// Upper bound on the number of regimes: the k in `2..=min(k_range_max, T−1)`
/// maximizing the Caliński–Harabasz index of a k-means clustering of the
/// scaled slopes sampled on an equidistant grid of `grid_eval_count` points.
/// Returns 1 if the scaled slopes are all identical or no k is admissible.
pub fn kmax_calinski_harabasz(
    step1: &StepOneFit,
    grid: &Grid,
    grid_eval_count: usize,
    k_range_max: usize,
    config: &KMeansConfig,
) -> Result<usize> {
    let eval = Grid::equidistant(grid_eval_count)?;
    let points: Vec<Vec<f64>> = step1
        .fits
        .iter()
        .map(|f| {
            if f.alpha_delta.len() != grid.len() {
                return Err(Error::LengthMismatch {
                    expected: grid.len(),
                    got: f.alpha_delta.len(),
                });
            }
            Ok(grid.interpolate(&f.alpha_delta, eval.points()))
        })
        .collect::<Result<_>>()?;
    let t = points.len();
    if t < 3 || points.iter().all(|p| p == &points[0]) {
        return Ok(1);
    }
    let upper = k_range_max.min(t - 1);
    let mut best = (1, f64::NEG_INFINITY);
    for k in 2..=upper {
        let fit = kmeans(&points, k, config)?;
        let ch = calinski_harabasz(&points, &fit.labels);
        if ch > best.1 {
            best = (k, ch);
        }
    }
    Ok(best.0)
}
