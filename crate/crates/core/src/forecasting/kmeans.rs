//! k-means (k-means++ seeding, Lloyd iterations) and the gap statistic.

use rand::Rng;

use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Total within-cluster sum of squares.
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

pub fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iter: usize) -> KMeans {
    let dim = points[0].len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let k = nearest(&centroids, p);
            if labels[i] != k {
                labels[i] = k;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for (k, c) in centroids.iter_mut().enumerate() {
            // an emptied cluster keeps its previous centroid
            if counts[k] > 0 {
                for (cv, s) in c.iter_mut().zip(&sums[k]) {
                    *cv = s / counts[k] as f64;
                }
            }
        }
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| sq_dist(p, &centroids[l]))
        .sum();
    KMeans {
        centroids,
        labels,
        inertia,
    }
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.gen_range(0..points.len())
        } else {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        };
        centroids.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, centroids.last().unwrap()));
        }
    }
    centroids
}

/// Best of `n_init` k-means++ restarts by inertia.
pub fn kmeans(points: &[Vec<f64>], k: usize, n_init: usize, seed: u64) -> KMeans {
    assert!(!points.is_empty() && k >= 1 && k <= points.len());
    let mut rng = seed::rng(seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..n_init.max(1) {
        let fit = lloyd(points, plus_plus(points, k, &mut rng), 100);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    best.unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapConfig {
    pub k_max: usize,
    pub n_refs: usize,
    pub n_init: usize,
}

impl Default for GapConfig {
    fn default() -> Self {
        GapConfig {
            k_max: 8,
            n_refs: 50,
            n_init: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapResult {
    pub k: usize,
    /// `gap[i]` is the gap at `k = i + 1`.
    pub gap: Vec<f64>,
    pub se: Vec<f64>,
    pub fit: KMeans,
}

/// Chooses k by the gap statistic with reference sets drawn uniformly over
/// the bounding box of `points`. The selected k is the smallest with
/// `gap(k) >= gap(k+1) - se(k+1)`.
pub fn gap_statistic(points: &[Vec<f64>], cfg: &GapConfig, seed: u64) -> GapResult {
    let n = points.len();
    let dim = points[0].len();
    let mut distinct = points.to_vec();
    distinct.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    distinct.dedup();
    let k_max = cfg.k_max.min(distinct.len()).max(1);
    let fits: Vec<KMeans> = (1..=k_max)
        .map(|k| kmeans(points, k, cfg.n_init, seed::derive(seed, &[k as u64])))
        .collect();
    if distinct.len() == 1 || fits[0].inertia <= 0.0 {
        return GapResult {
            k: 1,
            gap: vec![0.0],
            se: vec![0.0],
            fit: fits.into_iter().next().unwrap(),
        };
    }
    let lo: Vec<f64> = (0..dim)
        .map(|j| points.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min))
        .collect();
    let hi: Vec<f64> = (0..dim)
        .map(|j| {
            points
                .iter()
                .map(|p| p[j])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    // Dispersions equal to zero (as many clusters as distinct points) are
    // floored so their logarithm stays finite.
    let floor = fits[0].inertia * 1e-12;
    let log_w = |w: f64| w.max(floor).ln();
    let mut rng = seed::rng(seed::derive(seed, &[seed::key("reference")]));
    let mut ref_logs = vec![Vec::with_capacity(cfg.n_refs); k_max];
    for b in 0..cfg.n_refs {
        let reference: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..dim)
                    .map(|j| {
                        if hi[j] > lo[j] {
                            rng.gen_range(lo[j]..hi[j])
                        } else {
                            lo[j]
                        }
                    })
                    .collect()
            })
            .collect();
        for k in 1..=k_max {
            let fit = kmeans(
                &reference,
                k,
                cfg.n_init,
                seed::derive(seed, &[b as u64, k as u64, 7]),
            );
            ref_logs[k - 1].push(log_w(fit.inertia));
        }
    }
    let mut gap = Vec::with_capacity(k_max);
    let mut se = Vec::with_capacity(k_max);
    for k in 0..k_max {
        let logs = &ref_logs[k];
        let mean = logs.iter().sum::<f64>() / logs.len() as f64;
        let sd = (logs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / logs.len() as f64).sqrt();
        gap.push(mean - log_w(fits[k].inertia));
        se.push(sd * (1.0 + 1.0 / cfg.n_refs as f64).sqrt());
    }
    let k = (0..k_max - 1)
        .find(|&i| gap[i] >= gap[i + 1] - se[i + 1])
        .map_or(k_max, |i| i + 1);
    GapResult {
        k,
        gap,
        se,
        fit: fits.into_iter().nth(k - 1).unwrap(),
    }
}

#[cfg(test)]
mod tests {
    use rand_distr::{Distribution, Normal};

    use super::*;

    fn blobs(centres: &[(f64, f64)], per: usize, sd: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seed::rng(seed);
        let noise = Normal::new(0.0, sd).unwrap();
        centres
            .iter()
            .flat_map(|&(x, y)| {
                (0..per)
                    .map(|_| vec![x + noise.sample(&mut rng), y + noise.sample(&mut rng)])
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    #[test]
    fn separates_two_blobs() {
        let pts = blobs(&[(0.0, 0.0), (10.0, 10.0)], 20, 0.5, 1);
        let fit = kmeans(&pts, 2, 5, 2);
        assert!(fit.labels[..20].iter().all(|&l| l == fit.labels[0]));
        assert!(fit.labels[20..].iter().all(|&l| l == fit.labels[20]));
        assert_ne!(fit.labels[0], fit.labels[20]);
    }

    #[test]
    fn gap_picks_planted_k() {
        for (centres, want) in [
            (vec![(0.0, 0.0), (10.0, 0.0)], 2),
            (vec![(0.0, 0.0), (10.0, 0.0), (5.0, 9.0)], 3),
        ] {
            let pts = blobs(&centres, 15, 0.6, 3);
            assert_eq!(gap_statistic(&pts, &GapConfig::default(), 4).k, want);
        }
    }

    #[test]
    fn gap_handles_single_group() {
        let pts = blobs(&[(3.0, 3.0)], 30, 1.0, 5);
        assert_eq!(gap_statistic(&pts, &GapConfig::default(), 6).k, 1);
        let same = vec![vec![1.0, 2.0]; 10];
        assert_eq!(gap_statistic(&same, &GapConfig::default(), 6).k, 1);
    }
}
