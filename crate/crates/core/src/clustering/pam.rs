//! Partitioning around medoids on a precomputed dissimilarity matrix.

use crate::error::{Error, Result};

/// Symmetric dissimilarity matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = f(i, j);
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        DistanceMatrix { n, data }
    }

    /// Upper-triangle values in row order, as produced for `i < j`.
    pub fn from_upper(n: usize, upper: &[f64]) -> Result<Self> {
        if upper.len() != n * n.saturating_sub(1) / 2 {
            return Err(Error::invalid("upper triangle has the wrong length"));
        }
        let mut it = upper.iter();
        Ok(Self::from_fn(n, |_, _| *it.next().unwrap()))
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PamResult {
    /// Medoid indices, ascending; cluster `c` has medoid `medoids[c]`.
    pub medoids: Vec<usize>,
    pub assignment: Vec<usize>,
    /// Sum of distances to the assigned medoid.
    pub cost: f64,
    pub swaps: usize,
}

fn nearest_two(d: &DistanceMatrix, medoids: &[usize], j: usize) -> (usize, f64, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    let mut second = f64::INFINITY;
    for (c, &m) in medoids.iter().enumerate() {
        let v = d.get(j, m);
        if v < best.1 {
            second = best.1;
            best = (c, v);
        } else if v < second {
            second = v;
        }
    }
    (best.0, best.1, second)
}

fn total_cost(d: &DistanceMatrix, medoids: &[usize]) -> f64 {
    (0..d.len())
        .map(|j| {
            medoids
                .iter()
                .map(|&m| d.get(j, m))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

/// BUILD then SWAP until no swap lowers the cost. Deterministic: ties go
/// to the lowest index.
pub fn pam(d: &DistanceMatrix, k: usize) -> Result<PamResult> {
    let n = d.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!(
            "PAM needs 1 <= k <= n, got k={k}, n={n}"
        )));
    }
    // BUILD: greedily add the medoid that lowers the cost most.
    let mut medoids: Vec<usize> = Vec::with_capacity(k);
    let mut nearest = vec![f64::INFINITY; n];
    for _ in 0..k {
        let mut best = (usize::MAX, f64::INFINITY);
        for h in (0..n).filter(|h| !medoids.contains(h)) {
            let cost: f64 = (0..n).map(|j| nearest[j].min(d.get(j, h))).sum();
            if cost < best.1 {
                best = (h, cost);
            }
        }
        medoids.push(best.0);
        for j in 0..n {
            nearest[j] = nearest[j].min(d.get(j, best.0));
        }
    }
    // SWAP: apply the best improving (medoid, non-medoid) exchange.
    let mut swaps = 0;
    loop {
        let info: Vec<(usize, f64, f64)> = (0..n).map(|j| nearest_two(d, &medoids, j)).collect();
        let mut best = (0usize, 0usize, -1e-12);
        for (mi, _) in medoids.iter().enumerate() {
            for h in (0..n).filter(|h| !medoids.contains(h)) {
                let mut delta = 0.0;
                for (j, &(c, dn, ds)) in info.iter().enumerate() {
                    let dh = d.get(j, h);
                    delta += if c == mi {
                        dh.min(ds) - dn
                    } else {
                        (dh - dn).min(0.0)
                    };
                }
                if delta < best.2 {
                    best = (mi, h, delta);
                }
            }
        }
        if best.2 >= -1e-12 {
            break;
        }
        medoids[best.0] = best.1;
        swaps += 1;
    }
    medoids.sort_unstable();
    let assignment: Vec<usize> = (0..n).map(|j| nearest_two(d, &medoids, j).0).collect();
    Ok(PamResult {
        cost: total_cost(d, &medoids),
        medoids,
        assignment,
        swaps,
    })
}

/// Silhouette width of every point; singletons get 0.
pub fn silhouette(d: &DistanceMatrix, assignment: &[usize]) -> Vec<f64> {
    let n = d.len();
    let k = assignment.iter().max().map_or(0, |m| m + 1);
    let sizes = (0..k)
        .map(|c| assignment.iter().filter(|&&a| a == c).count())
        .collect::<Vec<_>>();
    (0..n)
        .map(|i| {
            let own = assignment[i];
            if sizes[own] <= 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for j in 0..n {
                if j != i {
                    sums[assignment[j]] += d.get(i, j);
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 && b.is_finite() {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect()
}

/// Mean silhouette for each k in `k_min..=k_max` (capped at `n - 1`) and
/// the k that maximises it; ties keep the smaller k. All-identical points
/// give k = 1.
pub fn select_k(
    d: &DistanceMatrix,
    k_min: usize,
    k_max: usize,
) -> Result<(usize, Vec<(usize, f64)>)> {
    let n = d.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "silhouette selection needs at least 3 points, got {n}"
        )));
    }
    if (0..n).all(|i| (0..n).all(|j| d.get(i, j) == 0.0)) {
        log::warn!("all profiles are identical; reporting a single cluster");
        return Ok((1, Vec::new()));
    }
    let hi = k_max.min(n - 1);
    let lo = k_min.max(2);
    if lo > hi {
        return Err(Error::invalid(format!(
            "empty k range {k_min}..={k_max} for {n} points"
        )));
    }
    let mut scores = Vec::new();
    for k in lo..=hi {
        let fit = pam(d, k)?;
        let s = silhouette(d, &fit.assignment);
        scores.push((k, s.iter().sum::<f64>() / n as f64));
    }
    let best = scores
        .iter()
        .fold(scores[0], |b, &s| if s.1 > b.1 + 1e-12 { s } else { b });
    Ok((best.0, scores))
}

/// Adjusted Rand index between two labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().flatten().map(|&v| c2(v)).sum();
    let rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(n as u64);
    let expected = rows * cols / total;
    let max = (rows + cols) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn points_matrix(pts: &[(f64, f64)]) -> DistanceMatrix {
        DistanceMatrix::from_fn(pts.len(), |i, j| {
            ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt()
        })
    }

    fn blobs(k: usize) -> (Vec<(f64, f64)>, Vec<usize>) {
        let offsets = [
            (0.0, 0.0),
            (0.3, 0.1),
            (-0.2, 0.25),
            (0.1, -0.3),
            (-0.25, -0.1),
        ];
        let centres = [(0.0, 0.0), (10.0, 0.0), (5.0, 9.0), (-8.0, 7.0)];
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (c, centre) in centres.iter().take(k).enumerate() {
            for o in offsets {
                pts.push((centre.0 + o.0, centre.1 + o.1));
                truth.push(c);
            }
        }
        (pts, truth)
    }

    #[test]
    fn k_equals_n_costs_nothing() {
        let (pts, _) = blobs(2);
        let r = pam(&points_matrix(&pts), pts.len()).unwrap();
        assert_eq!(r.cost, 0.0);
        assert!(pam(&points_matrix(&pts), pts.len() + 1).is_err());
    }

    #[test]
    fn recovers_two_blobs() {
        let (pts, truth) = blobs(2);
        let r = pam(&points_matrix(&pts), 2).unwrap();
        assert_eq!(adjusted_rand_index(&r.assignment, &truth), 1.0);
    }

    #[test]
    fn silhouette_picks_planted_k() {
        for k in [2, 3, 4] {
            let (pts, _) = blobs(k);
            assert_eq!(select_k(&points_matrix(&pts), 2, 8).unwrap().0, k);
        }
    }

    #[test]
    fn identical_points_give_one_cluster() {
        let d = DistanceMatrix::from_fn(5, |_, _| 0.0);
        assert_eq!(select_k(&d, 2, 8).unwrap().0, 1);
    }

    #[test]
    fn ari_known_values() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        // sklearn: adjusted_rand_score([0,0,1,1],[0,1,0,1]) = -0.5
        assert!((adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]) + 0.5).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn swap_never_worse_than_build(pts in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 6..20), k in 1usize..5) {
            let d = points_matrix(&pts);
            let k = k.min(pts.len());
            let r = pam(&d, k).unwrap();
            // no single swap improves the result
            for (mi, _) in r.medoids.iter().enumerate() {
                for h in (0..pts.len()).filter(|h| !r.medoids.contains(h)) {
                    let mut m = r.medoids.clone();
                    m[mi] = h;
                    prop_assert!(total_cost(&d, &m) >= r.cost - 1e-9);
                }
            }
        }
    }
}
