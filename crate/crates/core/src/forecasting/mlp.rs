//! Single-hidden-layer perceptron: tanh hidden units, linear output, inputs
//! and target min-max scaled to [-1, 1], trained with Adam and early
//! stopping on a held-out block of the training days.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::forest::FeatureFolds;
use super::{Forecaster, Method};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: f64,
    pub max: f64,
}

impl MinMaxScaler {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Self {
        let (min, max) = values
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        if min.is_finite() {
            MinMaxScaler { min, max }
        } else {
            MinMaxScaler { min: 0.0, max: 0.0 }
        }
    }

    fn span(&self) -> f64 {
        self.max - self.min
    }

    /// Maps `[min, max]` onto `[-1, 1]`; a constant column maps to 0.
    pub fn scale(&self, v: f64) -> f64 {
        if self.span() > 0.0 {
            2.0 * (v - self.min) / self.span() - 1.0
        } else {
            0.0
        }
    }

    pub fn unscale(&self, s: f64) -> f64 {
        if self.span() > 0.0 {
            (s + 1.0) / 2.0 * self.span() + self.min
        } else {
            self.min
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden_candidates: Vec<usize>,
    pub cv_folds: usize,
    pub folds: FeatureFolds,
    /// Share of training days held out for early stopping.
    pub holdout_frac: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_restarts: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_candidates: vec![1, 2, 4, 8, 16, 30],
            cv_folds: 5,
            folds: FeatureFolds::ContiguousDays,
            holdout_frac: 0.2,
            max_epochs: 200,
            patience: 15,
            learning_rate: 0.01,
            batch_size: 32,
            max_restarts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Net {
    hidden: usize,
    inputs: usize,
    /// `[w1 (hidden x inputs), b1 (hidden), w2 (hidden), b2]`
    w: Vec<f64>,
}

impl Net {
    fn new(inputs: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let n = hidden * inputs + 2 * hidden + 1;
        let a1 = 1.0 / (inputs as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        let mut w = vec![0.0; n];
        for (i, v) in w.iter_mut().enumerate() {
            let a = if i < hidden * inputs {
                a1
            } else if i < hidden * (inputs + 1) {
                0.0
            } else {
                a2
            };
            *v = if a > 0.0 { rng.gen_range(-a..a) } else { 0.0 };
        }
        w[n - 1] = 0.0;
        Net { hidden, inputs, w }
    }

    fn forward(&self, x: &[f64], act: &mut [f64]) -> f64 {
        let (h, p) = (self.hidden, self.inputs);
        let (w1, rest) = self.w.split_at(h * p);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(h);
        let mut out = b2[0];
        for j in 0..h {
            let z: f64 = b1[j]
                + w1[j * p..(j + 1) * p]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            act[j] = z.tanh();
            out += w2[j] * act[j];
        }
        out
    }

    /// Adds the gradient of `0.5 (f(x) - y)^2` to `grad`; returns the loss.
    fn backward(&self, x: &[f64], y: f64, act: &mut [f64], grad: &mut [f64]) -> f64 {
        let (h, p) = (self.hidden, self.inputs);
        let err = self.forward(x, act) - y;
        let w2 = &self.w[h * p + h..h * p + 2 * h];
        for j in 0..h {
            let d = err * w2[j] * (1.0 - act[j] * act[j]);
            for k in 0..p {
                grad[j * p + k] += d * x[k];
            }
            grad[h * p + j] += d;
            grad[h * p + h + j] += err * act[j];
        }
        grad[h * p + 2 * h] += err;
        0.5 * err * err
    }

    fn mse(&self, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
        let mut act = vec![0.0; self.hidden];
        xs.iter()
            .zip(ys)
            .map(|(x, y)| (self.forward(x, &mut act) - y).powi(2))
            .sum::<f64>()
            / xs.len().max(1) as f64
    }
}

/// Trains one network with early stopping; `None` when the loss diverges.
fn train(
    xs: &[Vec<f64>],
    ys: &[f64],
    holdout_from: usize,
    hidden: usize,
    lr: f64,
    cfg: &MlpConfig,
    seed: u64,
) -> Option<Net> {
    let mut rng = seed::rng(seed);
    let p = xs[0].len();
    let mut net = Net::new(p, hidden, &mut rng);
    let (xt, xv) = xs.split_at(holdout_from);
    let (yt, yv) = ys.split_at(holdout_from);
    let n_w = net.w.len();
    let (mut m1, mut m2) = (vec![0.0; n_w], vec![0.0; n_w]);
    let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut step = 0i32;
    let mut best = (f64::INFINITY, net.clone());
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..xt.len()).collect();
    let mut act = vec![0.0; hidden];
    let mut grad = vec![0.0; n_w];
    for _ in 0..cfg.max_epochs {
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                net.backward(&xt[i], yt[i], &mut act, &mut grad);
            }
            step += 1;
            let (c1, c2) = (1.0 - b1.powi(step), 1.0 - b2.powi(step));
            for k in 0..n_w {
                let g = grad[k] / batch.len() as f64;
                m1[k] = b1 * m1[k] + (1.0 - b1) * g;
                m2[k] = b2 * m2[k] + (1.0 - b2) * g * g;
                net.w[k] -= lr * (m1[k] / c1) / ((m2[k] / c2).sqrt() + eps);
            }
        }
        let val = if xv.is_empty() {
            net.mse(xt, yt)
        } else {
            net.mse(xv, yv)
        };
        if !val.is_finite() || val > 1e6 {
            return None;
        }
        if val < best.0 - 1e-9 {
            best = (val, net.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Some(best.1)
}

/// Restarts with a smaller step after divergence.
fn train_with_restarts(
    xs: &[Vec<f64>],
    ys: &[f64],
    holdout_from: usize,
    hidden: usize,
    cfg: &MlpConfig,
    seed: u64,
) -> Option<(Net, usize)> {
    let mut lr = cfg.learning_rate;
    for attempt in 0..=cfg.max_restarts {
        if let Some(net) = train(
            xs,
            ys,
            holdout_from,
            hidden,
            lr,
            cfg,
            seed::derive(seed, &[attempt as u64]),
        ) {
            return Some((net, attempt));
        }
        lr /= 10.0;
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    net: Net,
    pub x_scalers: Vec<MinMaxScaler>,
    pub y_scaler: MinMaxScaler,
    /// CV RMSE for each hidden-layer size tried.
    pub cv_rmse: Vec<(usize, f64)>,
    pub restarts: usize,
}

impl Mlp {
    pub fn hidden(&self) -> usize {
        self.net.hidden
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let xs: Vec<f64> = x
            .iter()
            .zip(&self.x_scalers)
            .map(|(v, s)| s.scale(*v))
            .collect();
        let mut act = vec![0.0; self.net.hidden];
        self.y_scaler.unscale(self.net.forward(&xs, &mut act))
    }
}

/// Rows sorted by `(group, features, target)`; the last `holdout_frac` of
/// the distinct groups forms the early-stopping block.
fn prepare(x: &[Vec<f64>], y: &[f64], groups: &[usize], holdout_frac: f64) -> (Vec<usize>, usize) {
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
    let mut days: Vec<usize> = groups.to_vec();
    days.sort_unstable();
    days.dedup();
    let n_hold =
        ((days.len() as f64 * holdout_frac).round() as usize).min(days.len().saturating_sub(1));
    let first_hold = days[days.len() - n_hold..].first().copied();
    let cut = match (n_hold, first_hold) {
        (0, _) | (_, None) => order.len(),
        (_, Some(d)) => order
            .iter()
            .position(|&i| groups[i] >= d)
            .unwrap_or(order.len()),
    };
    (order, cut)
}

pub fn fit_mlp(
    x: &[Vec<f64>],
    y: &[f64],
    groups: &[usize],
    cfg: &MlpConfig,
    seed: u64,
) -> Result<Mlp> {
    if x.len() != y.len() || x.len() != groups.len() {
        return Err(Error::invalid("feature, target and group lengths differ"));
    }
    if x.len() < super::forest::MIN_FOREST_ROWS {
        return Err(Error::InsufficientData(format!(
            "MLP needs at least 50 rows, got {}",
            x.len()
        )));
    }
    if cfg.hidden_candidates.contains(&0) || cfg.hidden_candidates.is_empty() {
        return Err(Error::invalid("hidden sizes must be positive"));
    }
    let p = x[0].len();
    let x_scalers: Vec<MinMaxScaler> = (0..p)
        .map(|k| MinMaxScaler::fit(x.iter().map(|r| r[k])))
        .collect();
    let y_scaler = MinMaxScaler::fit(y.iter().copied());
    let scale_row = |r: &[f64]| {
        r.iter()
            .zip(&x_scalers)
            .map(|(v, s)| s.scale(*v))
            .collect::<Vec<f64>>()
    };

    let mut cv_rmse = Vec::new();
    let hidden = if cfg.hidden_candidates.len() == 1 {
        cfg.hidden_candidates[0]
    } else {
        let (order, _) = prepare(x, y, groups, 0.0);
        let sorted_groups: Vec<usize> = order.iter().map(|&i| groups[i]).collect();
        let folds = super::forest::assign_folds(
            &sorted_groups,
            cfg.cv_folds,
            cfg.folds,
            seed::derive(seed, &[seed::key("folds")]),
        );
        let n_folds = folds.iter().max().map_or(0, |f| f + 1);
        for &h in &cfg.hidden_candidates {
            let mut sse = 0.0;
            let mut failed = false;
            for k in 0..n_folds {
                let tr: Vec<usize> = (0..order.len())
                    .filter(|&i| folds[i] != k)
                    .map(|i| order[i])
                    .collect();
                let te: Vec<usize> = (0..order.len())
                    .filter(|&i| folds[i] == k)
                    .map(|i| order[i])
                    .collect();
                let xt: Vec<Vec<f64>> = tr.iter().map(|&i| x[i].clone()).collect();
                let yt: Vec<f64> = tr.iter().map(|&i| y[i]).collect();
                let gt: Vec<usize> = tr.iter().map(|&i| groups[i]).collect();
                let (o, cut) = prepare(&xt, &yt, &gt, cfg.holdout_frac);
                let xs: Vec<Vec<f64>> = o.iter().map(|&i| scale_row(&xt[i])).collect();
                let ys: Vec<f64> = o.iter().map(|&i| y_scaler.scale(yt[i])).collect();
                match train_with_restarts(
                    &xs,
                    &ys,
                    cut,
                    h,
                    cfg,
                    seed::derive(seed, &[h as u64, k as u64]),
                ) {
                    Some((net, _)) => {
                        let mut act = vec![0.0; h];
                        sse += te
                            .iter()
                            .map(|&i| {
                                (y_scaler.unscale(net.forward(&scale_row(&x[i]), &mut act)) - y[i])
                                    .powi(2)
                            })
                            .sum::<f64>();
                    }
                    None => {
                        failed = true;
                        break;
                    }
                }
            }
            let score = if failed {
                f64::INFINITY
            } else {
                (sse / x.len() as f64).sqrt()
            };
            cv_rmse.push((h, score));
        }
        let best = cv_rmse
            .iter()
            .fold((cfg.hidden_candidates[0], f64::INFINITY), |b, &(h, e)| {
                if e < b.1 {
                    (h, e)
                } else {
                    b
                }
            });
        best.0
    };
    let (order, cut) = prepare(x, y, groups, cfg.holdout_frac);
    let xs: Vec<Vec<f64>> = order.iter().map(|&i| scale_row(&x[i])).collect();
    let ys: Vec<f64> = order.iter().map(|&i| y_scaler.scale(y[i])).collect();
    let (net, restarts) = train_with_restarts(
        &xs,
        &ys,
        cut,
        hidden,
        cfg,
        seed::derive(seed, &[seed::key("final")]),
    )
    .ok_or_else(|| Error::Numerical(format!("MLP diverged after {} restarts", cfg.max_restarts)))?;
    Ok(Mlp {
        net,
        x_scalers,
        y_scaler,
        cv_rmse,
        restarts,
    })
}

/// MLP predictions for one cell, looked up by `(day, bin)`.
#[derive(Debug, Clone)]
pub struct MlpForecaster {
    pub model: Mlp,
    features: BTreeMap<(usize, usize), Vec<f64>>,
}

impl MlpForecaster {
    pub fn new(model: Mlp, features: BTreeMap<(usize, usize), Vec<f64>>) -> Self {
        MlpForecaster { model, features }
    }
}

impl Forecaster for MlpForecaster {
    fn method(&self) -> Method {
        Method::Mlp
    }

    fn predict_raw(&self, day: usize, bin: usize) -> f64 {
        self.features
            .get(&(day, bin))
            .map_or(f64::NAN, |x| self.model.predict(x))
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;

    fn linear(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>, Vec<usize>) {
        let mut rng = seed::rng(seed);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.gen_range(0.0..10.0), rng.gen_range(0.0..1.0)])
            .collect();
        let y = x.iter().map(|r| 2.0 * r[0]).collect();
        (x, y, (0..n).map(|i| i / 20).collect())
    }

    #[test]
    fn fits_linear_target() {
        let (x, y, g) = linear(400, 1);
        let cfg = MlpConfig {
            hidden_candidates: vec![1, 4],
            max_epochs: 300,
            ..Default::default()
        };
        let m = fit_mlp(&x, &y, &g, &cfg, 5).unwrap();
        let (xt, yt, _) = linear(200, 2);
        let mean = yt.iter().sum::<f64>() / yt.len() as f64;
        let sd = (yt.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / yt.len() as f64).sqrt();
        let rmse = (xt
            .iter()
            .zip(&yt)
            .map(|(r, t)| (m.predict(r) - t).powi(2))
            .sum::<f64>()
            / yt.len() as f64)
            .sqrt();
        assert!(
            rmse < 0.05 * sd,
            "rmse {rmse} sd {sd} hidden {}",
            m.hidden()
        );
    }

    #[test]
    fn constant_target() {
        let (x, _, g) = linear(100, 3);
        let y = vec![4.0; 100];
        let m = fit_mlp(
            &x,
            &y,
            &g,
            &MlpConfig {
                hidden_candidates: vec![3],
                ..Default::default()
            },
            1,
        )
        .unwrap();
        assert!(x.iter().all(|r| m.predict(r) == 4.0));
    }

    #[test]
    fn deterministic_under_seed() {
        let (x, y, g) = linear(120, 4);
        let cfg = MlpConfig {
            hidden_candidates: vec![2, 3],
            max_epochs: 30,
            ..Default::default()
        };
        assert_eq!(
            fit_mlp(&x, &y, &g, &cfg, 8).unwrap(),
            fit_mlp(&x, &y, &g, &cfg, 8).unwrap()
        );
    }

    proptest! {
        #[test]
        fn scaler_round_trip(lo in -1e3f64..1e3, span in 1e-3f64..1e3, t in 0.0f64..1.0) {
            let s = MinMaxScaler { min: lo, max: lo + span };
            let v = lo + t * span;
            prop_assert!((s.unscale(s.scale(v)) - v).abs() < 1e-9);
            prop_assert!(s.scale(v) >= -1.0 - 1e-12 && s.scale(v) <= 1.0 + 1e-12);
        }
    }
}
