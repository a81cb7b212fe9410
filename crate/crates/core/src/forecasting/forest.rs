//! Regression forest of CART trees.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Forecaster, Method};
use crate::error::{Error, Result};
use crate::seed;

/// How cross-validation folds are drawn from the training rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureFolds {
    /// Contiguous blocks of training days.
    #[default]
    ContiguousDays,
    /// Rows assigned to folds at random.
    RandomRows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Trees per forest while cross-validating `m`.
    pub cv_trees: usize,
    pub min_leaf: usize,
    pub m_candidates: Vec<usize>,
    pub cv_folds: usize,
    pub folds: FeatureFolds,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 500,
            cv_trees: 100,
            min_leaf: 5,
            m_candidates: vec![2, 4, 5],
            cv_folds: 5,
            folds: FeatureFolds::ContiguousDays,
        }
    }
}

pub const MIN_FOREST_ROWS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

struct Builder<'a, R> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    m: usize,
    min_leaf: usize,
    rng: R,
    nodes: Vec<Node>,
    scratch: Vec<(f64, f64)>,
}

impl<R: Rng> Builder<'_, R> {
    fn grow(&mut self, idx: &mut [usize]) -> usize {
        let id = self.nodes.len();
        let n = idx.len();
        let mean = idx.iter().map(|&i| self.y[i]).sum::<f64>() / n as f64;
        self.nodes.push(Node::Leaf(mean));
        if n < 2 * self.min_leaf {
            return id;
        }
        let p = self.x[0].len();
        let features = sample(&mut self.rng, p, self.m.min(p));
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let mut best: Option<(f64, usize, f64)> = None;
        for f in features.iter() {
            self.scratch.clear();
            self.scratch
                .extend(idx.iter().map(|&i| (self.x[i][f], self.y[i])));
            self.scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            // maximise sum_L^2/n_L + sum_R^2/n_R, equivalent to minimising SSE
            let mut left = 0.0;
            for k in 0..n - 1 {
                left += self.scratch[k].1;
                let n_left = k + 1;
                if n_left < self.min_leaf || n - n_left < self.min_leaf {
                    continue;
                }
                let (lo, hi) = (self.scratch[k].0, self.scratch[k + 1].0);
                if lo == hi {
                    continue;
                }
                let right = total - left;
                let gain = left * left / n_left as f64 + right * right / (n - n_left) as f64;
                if best.is_none_or(|b| gain > b.0) {
                    best = Some((gain, f, lo + (hi - lo) / 2.0));
                }
            }
        }
        let Some((gain, feature, threshold)) = best else {
            return id;
        };
        if gain <= total * total / n as f64 * (1.0 + 1e-12) + 1e-12 {
            return id;
        }
        let mut split = 0;
        for k in 0..n {
            if self.x[idx[k]][feature] <= threshold {
                idx.swap(k, split);
                split += 1;
            }
        }
        let (l, r) = idx.split_at_mut(split);
        let left = self.grow(l);
        let right = self.grow(r);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

fn grow_tree(x: &[Vec<f64>], y: &[f64], m: usize, min_leaf: usize, seed: u64) -> Tree {
    let mut rng = seed::rng(seed);
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
    let mut b = Builder {
        x,
        y,
        m,
        min_leaf,
        rng,
        nodes: Vec::new(),
        scratch: Vec::with_capacity(n),
    };
    b.grow(&mut idx);
    Tree { nodes: b.nodes }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    trees: Vec<Tree>,
    pub m: usize,
    /// CV RMSE for each candidate `m`.
    pub cv_rmse: Vec<(usize, f64)>,
}

impl RandomForest {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

fn grow_forest(
    x: &[Vec<f64>],
    y: &[f64],
    m: usize,
    n_trees: usize,
    min_leaf: usize,
    seed: u64,
) -> Vec<Tree> {
    (0..n_trees)
        .into_par_iter()
        .map(|t| grow_tree(x, y, m, min_leaf, seed::derive(seed, &[t as u64])))
        .collect()
}

/// Fits a forest on rows `x` with targets `y`. `groups` gives each row's
/// day, used to form contiguous CV folds.
pub fn fit_random_forest(
    x: &[Vec<f64>],
    y: &[f64],
    groups: &[usize],
    cfg: &ForestConfig,
    seed: u64,
) -> Result<RandomForest> {
    if x.len() != y.len() || x.len() != groups.len() {
        return Err(Error::invalid("feature, target and group lengths differ"));
    }
    if x.len() < MIN_FOREST_ROWS {
        return Err(Error::InsufficientData(format!(
            "random forest needs at least {MIN_FOREST_ROWS} rows, got {}",
            x.len()
        )));
    }
    if cfg.m_candidates.is_empty() || cfg.n_trees == 0 {
        return Err(Error::invalid(
            "forest needs at least one tree and one m candidate",
        ));
    }
    // Canonical row order so the fit does not depend on input order.
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| {
        groups[a]
            .cmp(&groups[b])
            .then_with(|| {
                x[a].iter()
                    .zip(&x[b])
                    .map(|(u, v)| u.total_cmp(v))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .then_with(|| y[a].total_cmp(&y[b]))
    });
    let x: Vec<Vec<f64>> = order.iter().map(|&i| x[i].clone()).collect();
    let y: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let groups: Vec<usize> = order.iter().map(|&i| groups[i]).collect();

    let p = x[0].len();
    let mut candidates: Vec<usize> = cfg.m_candidates.iter().map(|&m| m.clamp(1, p)).collect();
    candidates.dedup();
    let mut cv_rmse = Vec::new();
    let m = if candidates.len() == 1 {
        candidates[0]
    } else {
        let folds = assign_folds(
            &groups,
            cfg.cv_folds,
            cfg.folds,
            seed::derive(seed, &[seed::key("folds")]),
        );
        let n_folds = folds.iter().max().map_or(0, |f| f + 1);
        for &m in &candidates {
            let mut sse = 0.0;
            for k in 0..n_folds {
                let (tr, te): (Vec<usize>, Vec<usize>) = (0..x.len()).partition(|&i| folds[i] != k);
                let xt: Vec<Vec<f64>> = tr.iter().map(|&i| x[i].clone()).collect();
                let yt: Vec<f64> = tr.iter().map(|&i| y[i]).collect();
                let trees = grow_forest(
                    &xt,
                    &yt,
                    m,
                    cfg.cv_trees.max(1),
                    cfg.min_leaf,
                    seed::derive(seed, &[m as u64, k as u64]),
                );
                let rf = RandomForest {
                    trees,
                    m,
                    cv_rmse: Vec::new(),
                };
                sse += te
                    .iter()
                    .map(|&i| (rf.predict(&x[i]) - y[i]).powi(2))
                    .sum::<f64>();
            }
            cv_rmse.push((m, (sse / x.len() as f64).sqrt()));
        }
        // first minimum wins ties
        cv_rmse
            .iter()
            .fold((candidates[0], f64::INFINITY), |b, &(m, e)| {
                if e < b.1 {
                    (m, e)
                } else {
                    b
                }
            })
            .0
    };
    let trees = grow_forest(
        &x,
        &y,
        m,
        cfg.n_trees,
        cfg.min_leaf,
        seed::derive(seed, &[seed::key("final")]),
    );
    Ok(RandomForest { trees, m, cv_rmse })
}

/// Fold index per row. Contiguous folds split the distinct groups (days)
/// into `k` consecutive blocks.
pub(crate) fn assign_folds(
    groups: &[usize],
    k: usize,
    mode: FeatureFolds,
    seed: u64,
) -> Vec<usize> {
    let k = k.max(2);
    match mode {
        FeatureFolds::ContiguousDays => {
            let mut days: Vec<usize> = groups.to_vec();
            days.sort_unstable();
            days.dedup();
            let k = k.min(days.len()).max(1);
            let block: BTreeMap<usize, usize> = days
                .iter()
                .enumerate()
                .map(|(i, &d)| (d, i * k / days.len()))
                .collect();
            groups.iter().map(|g| block[g]).collect()
        }
        FeatureFolds::RandomRows => {
            let mut rng = seed::rng(seed);
            let n = groups.len();
            let mut perm: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(&mut perm[..], &mut rng);
            let mut folds = vec![0; n];
            for (pos, &row) in perm.iter().enumerate() {
                folds[row] = pos * k / n;
            }
            folds
        }
    }
}

/// Forest predictions for one cell, looked up by `(day, bin)` from the
/// cell's feature rows.
#[derive(Debug, Clone)]
pub struct RandomForestForecaster {
    pub forest: RandomForest,
    features: BTreeMap<(usize, usize), Vec<f64>>,
}

impl RandomForestForecaster {
    pub fn new(forest: RandomForest, features: BTreeMap<(usize, usize), Vec<f64>>) -> Self {
        RandomForestForecaster { forest, features }
    }
}

impl Forecaster for RandomForestForecaster {
    fn method(&self) -> Method {
        Method::Rf
    }

    fn predict_raw(&self, day: usize, bin: usize) -> f64 {
        self.features
            .get(&(day, bin))
            .map_or(f64::NAN, |x| self.forest.predict(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(
        n: usize,
        seed: u64,
        f: impl Fn(&[f64]) -> f64,
    ) -> (Vec<Vec<f64>>, Vec<f64>, Vec<usize>) {
        let mut rng = seed::rng(seed);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..5).map(|_| rng.gen::<f64>() * 10.0).collect())
            .collect();
        let y = x.iter().map(|r| f(r)).collect();
        let g = (0..n).map(|i| i / 24).collect();
        (x, y, g)
    }

    fn small() -> ForestConfig {
        ForestConfig {
            n_trees: 60,
            cv_trees: 20,
            ..Default::default()
        }
    }

    #[test]
    fn learns_identity_feature() {
        let (x, y, g) = data(400, 1, |r| r[2]);
        let rf = fit_random_forest(&x, &y, &g, &small(), 7).unwrap();
        let sd = {
            let m = y.iter().sum::<f64>() / y.len() as f64;
            (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / y.len() as f64).sqrt()
        };
        let rmse = (x
            .iter()
            .zip(&y)
            .map(|(r, t)| (rf.predict(r) - t).powi(2))
            .sum::<f64>()
            / y.len() as f64)
            .sqrt();
        assert!(rmse < 0.1 * sd, "rmse {rmse} sd {sd}");
    }

    #[test]
    fn constant_target_gives_constant() {
        let (x, y, g) = data(100, 2, |_| 5.0);
        let rf = fit_random_forest(&x, &y, &g, &small(), 3).unwrap();
        assert!(x.iter().all(|r| rf.predict(r) == 5.0));
    }

    #[test]
    fn row_order_does_not_matter() {
        let (x, y, g) = data(150, 4, |r| r[0] * 2.0 + r[1]);
        let a = fit_random_forest(&x, &y, &g, &small(), 9).unwrap();
        let mut perm: Vec<usize> = (0..x.len()).collect();
        perm.reverse();
        perm.swap(3, 77);
        let xp: Vec<Vec<f64>> = perm.iter().map(|&i| x[i].clone()).collect();
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let gp: Vec<usize> = perm.iter().map(|&i| g[i]).collect();
        let b = fit_random_forest(&xp, &yp, &gp, &small(), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_rows() {
        let (x, y, g) = data(20, 1, |r| r[0]);
        assert!(matches!(
            fit_random_forest(&x, &y, &g, &small(), 1),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn contiguous_folds_follow_days() {
        let groups: Vec<usize> = (0..100).map(|i| i / 10).collect();
        let f = assign_folds(&groups, 5, FeatureFolds::ContiguousDays, 0);
        assert_eq!(f[0], 0);
        assert_eq!(f[19], 0);
        assert_eq!(f[20], 1);
        assert_eq!(f[99], 4);
        assert!(f.windows(2).all(|w| w[0] <= w[1]));
    }
}
