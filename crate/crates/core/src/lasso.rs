//! Lasso regression by cyclic coordinate descent.
//!
//! Predictors are standardised (mean 0, population SD 1) and the response is
//! centred, so the intercept is unpenalised and recovered afterwards. The
//! objective at penalty `lambda` is
//! `(1/2n) |y - b0 - X b|^2 + lambda |b|_1`.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    skewness, venue_entropy, CensusTable, PoiProfile, POI_CATEGORIES, SKEW_THRESHOLD,
};
use crate::seed;

/// Response and predictors, one row per unit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignMatrix {
    pub names: Vec<String>,
    pub row_ids: Vec<String>,
    /// Row-major predictor values (after any log transform).
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    /// Columns replaced by `ln(1 + x)`.
    pub log_transformed: Vec<bool>,
    pub dropped_rows: Vec<String>,
    /// Columns removed for being constant.
    pub dropped_columns: Vec<String>,
}

impl DesignMatrix {
    /// Builds a design matrix, dropping rows with missing values and
    /// constant columns.
    pub fn new(
        names: Vec<String>,
        row_ids: Vec<String>,
        x: Vec<Vec<Option<f64>>>,
        y: Vec<f64>,
    ) -> Result<Self> {
        if x.len() != y.len() || x.len() != row_ids.len() {
            return Err(Error::invalid(
                "design rows, ids and response lengths differ",
            ));
        }
        if x.iter().any(|r| r.len() != names.len()) {
            return Err(Error::invalid(
                "design row width differs from the column count",
            ));
        }
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        let mut ids = Vec::new();
        let mut dropped_rows = Vec::new();
        for ((r, yv), id) in x.into_iter().zip(y).zip(row_ids) {
            match r.into_iter().collect::<Option<Vec<f64>>>() {
                Some(vals) if yv.is_finite() && vals.iter().all(|v| v.is_finite()) => {
                    rows.push(vals);
                    ys.push(yv);
                    ids.push(id);
                }
                _ => dropped_rows.push(id),
            }
        }
        if !dropped_rows.is_empty() {
            log::warn!("dropped {} rows with missing values", dropped_rows.len());
        }
        let mut m = DesignMatrix {
            log_transformed: vec![false; names.len()],
            names,
            row_ids: ids,
            x: rows,
            y: ys,
            dropped_rows,
            dropped_columns: Vec::new(),
        };
        m.drop_constant_columns();
        Ok(m)
    }

    fn drop_constant_columns(&mut self) {
        let keep: Vec<bool> = (0..self.names.len())
            .map(|j| {
                let first = self.x.first().map(|r| r[j]);
                self.x.iter().any(|r| Some(r[j]) != first)
            })
            .collect();
        let mut k = 0;
        self.names.retain(|n| {
            let keep_it = keep[k];
            if !keep_it {
                self.dropped_columns.push(n.clone());
            }
            k += 1;
            keep_it
        });
        let mut k = 0;
        self.log_transformed.retain(|_| {
            k += 1;
            keep[k - 1]
        });
        for r in &mut self.x {
            let mut k = 0;
            r.retain(|_| {
                k += 1;
                keep[k - 1]
            });
        }
    }

    /// Census indicators plus, when PoI profiles are given, per-category
    /// counts, their total and venue entropy. Units without a PoI profile
    /// have no venues. Columns with skewness above the threshold are
    /// log-transformed.
    pub fn from_census(table: &CensusTable, pois: Option<&[PoiProfile]>) -> Result<Self> {
        let mut names: Vec<String> = table
            .units
            .iter()
            .flat_map(|u| u.indicators.keys().cloned())
            .collect();
        names.sort();
        names.dedup();
        let poi_by_id: BTreeMap<&str, &PoiProfile> = pois
            .unwrap_or(&[])
            .iter()
            .map(|p| (p.area_id.as_str(), p))
            .collect();
        let n_census = names.len();
        if pois.is_some() {
            names.extend(POI_CATEGORIES.iter().map(|c| poi_column(c)));
            names.push("poi_total".into());
            names.push("poi_entropy".into());
        }
        let mut rows = Vec::new();
        for u in &table.units {
            let mut r: Vec<Option<f64>> = names[..n_census]
                .iter()
                .map(|n| u.indicators.get(n).copied().flatten())
                .collect();
            if pois.is_some() {
                let counts: Vec<u64> = POI_CATEGORIES
                    .iter()
                    .map(|c| poi_by_id.get(u.id.as_str()).map_or(0, |p| p.count(c)))
                    .collect();
                r.extend(counts.iter().map(|&c| Some(c as f64)));
                r.push(Some(counts.iter().sum::<u64>() as f64));
                r.push(Some(venue_entropy(&counts)));
            }
            rows.push(r);
        }
        let ids = table.units.iter().map(|u| u.id.clone()).collect();
        let y = table.units.iter().map(|u| u.pickups as f64).collect();
        let mut m = DesignMatrix::new(names, ids, rows, y)?;
        for j in 0..m.names.len() {
            let col: Vec<f64> = m.x.iter().map(|r| r[j]).collect();
            if col.iter().all(|v| *v >= 0.0) && skewness(&col) > SKEW_THRESHOLD {
                m.log_transformed[j] = true;
                m.x.iter_mut().for_each(|r| r[j] = r[j].ln_1p());
            }
        }
        Ok(m)
    }

    pub fn n_rows(&self) -> usize {
        self.x.len()
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }
}

/// `"Nightlife Spot"` becomes `poi_nightlife_spot`.
fn poi_column(category: &str) -> String {
    let words: Vec<String> = category
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    format!("poi_{}", words.join("_"))
}

/// Column standardisation parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub y_mean: f64,
}

/// Standardised columns (column-major), centred response and parameters.
fn standardize(x: &[Vec<f64>], y: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>, Standardization) {
    let n = x.len() as f64;
    let p = x[0].len();
    let mut cols = vec![Vec::with_capacity(x.len()); p];
    let mut mean = vec![0.0; p];
    let mut sd = vec![0.0; p];
    for j in 0..p {
        mean[j] = x.iter().map(|r| r[j]).sum::<f64>() / n;
        sd[j] = (x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
        let s = if sd[j] > 0.0 { sd[j] } else { 1.0 };
        cols[j] = x.iter().map(|r| (r[j] - mean[j]) / s).collect();
    }
    let y_mean = y.iter().sum::<f64>() / n;
    let yc = y.iter().map(|v| v - y_mean).collect();
    (cols, yc, Standardization { mean, sd, y_mean })
}

fn soft_threshold(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoConfig {
    pub n_lambda: usize,
    /// Smallest penalty as a fraction of `lambda_max`.
    pub lambda_min_ratio: f64,
    /// Convergence threshold on the largest coefficient change in a sweep.
    pub tol: f64,
    pub max_sweeps: usize,
    pub folds: usize,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            n_lambda: 100,
            lambda_min_ratio: 1e-3,
            tol: 1e-7,
            max_sweeps: 100_000,
            folds: 10,
        }
    }
}

/// Solution at one penalty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LassoStep {
    pub lambda: f64,
    /// Coefficients on the standardised scale.
    pub beta: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LassoPath {
    pub names: Vec<String>,
    pub steps: Vec<LassoStep>,
    pub standardization: Standardization,
    pub lambda_max: f64,
    /// Standardised predictors, column-major, kept for diagnostics.
    #[serde(skip)]
    cols: Vec<Vec<f64>>,
    #[serde(skip)]
    yc: Vec<f64>,
}

/// Largest penalty with a non-zero slope.
fn lambda_max(cols: &[Vec<f64>], yc: &[f64]) -> f64 {
    let n = yc.len() as f64;
    cols.iter()
        .map(|c| (c.iter().zip(yc).map(|(a, b)| a * b).sum::<f64>() / n).abs())
        .fold(0.0, f64::max)
}

/// Default penalty sequence: log-spaced from `lambda_max` down.
pub fn lambda_sequence(lambda_max: f64, cfg: &LassoConfig) -> Vec<f64> {
    let k = cfg.n_lambda.max(1);
    if lambda_max <= 0.0 {
        return vec![0.0];
    }
    if k == 1 {
        return vec![lambda_max];
    }
    let lo = (lambda_max * cfg.lambda_min_ratio).ln();
    let hi = lambda_max.ln();
    (0..k)
        .map(|i| (hi + (lo - hi) * i as f64 / (k - 1) as f64).exp())
        .collect()
}

/// Coordinate descent at one penalty, warm-started from `beta`; `resid`
/// holds `yc - X beta` and is kept in sync.
fn descend(
    cols: &[Vec<f64>],
    resid: &mut [f64],
    beta: &mut [f64],
    lambda: f64,
    cfg: &LassoConfig,
) -> (bool, usize) {
    let n = resid.len() as f64;
    // (1/n) sum x_j^2; 1 for standardised non-constant columns
    let norms: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>() / n)
        .collect();
    for sweep in 1..=cfg.max_sweeps {
        let mut max_change = 0.0f64;
        for (j, col) in cols.iter().enumerate() {
            if norms[j] <= 0.0 {
                continue;
            }
            let old = beta[j];
            let rho = col
                .iter()
                .zip(resid.iter())
                .map(|(a, r)| a * r)
                .sum::<f64>()
                / n
                + norms[j] * old;
            let new = soft_threshold(rho, lambda) / norms[j];
            if new != old {
                let d = new - old;
                for (r, a) in resid.iter_mut().zip(col) {
                    *r -= d * a;
                }
                beta[j] = new;
                max_change = max_change.max(d.abs());
            }
        }
        if max_change < cfg.tol {
            return (true, sweep);
        }
    }
    (false, cfg.max_sweeps)
}

/// Fits the full path. `lambdas`, when given, must be non-increasing;
/// otherwise the default log-spaced sequence is used.
pub fn fit_lasso_path(
    m: &DesignMatrix,
    lambdas: Option<&[f64]>,
    cfg: &LassoConfig,
) -> Result<LassoPath> {
    if m.n_rows() < 2 || m.n_cols() == 0 {
        return Err(Error::InsufficientData(format!(
            "Lasso needs at least 2 rows and 1 column, got {}x{}",
            m.n_rows(),
            m.n_cols()
        )));
    }
    let (cols, yc, standardization) = standardize(&m.x, &m.y);
    let lmax = lambda_max(&cols, &yc);
    let seq = match lambdas {
        Some(l) => {
            if l.windows(2).any(|w| w[1] > w[0]) || l.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::invalid(
                    "lambda sequence must be non-negative and non-increasing",
                ));
            }
            l.to_vec()
        }
        None => lambda_sequence(lmax, cfg),
    };
    let mut beta = vec![0.0; cols.len()];
    let mut resid = yc.clone();
    let mut steps = Vec::with_capacity(seq.len());
    for lambda in seq {
        let (converged, sweeps) = descend(&cols, &mut resid, &mut beta, lambda, cfg);
        if !converged {
            log::warn!("coordinate descent did not converge at lambda {lambda:.3e}");
        }
        steps.push(LassoStep {
            lambda,
            beta: beta.clone(),
            converged,
            sweeps,
        });
    }
    Ok(LassoPath {
        names: m.names.clone(),
        steps,
        standardization,
        lambda_max: lmax,
        cols,
        yc,
    })
}

impl LassoPath {
    /// Slopes and intercept on the original predictor scale.
    pub fn original_scale(&self, step: usize) -> (f64, Vec<f64>) {
        let s = &self.standardization;
        let slopes: Vec<f64> = self.steps[step]
            .beta
            .iter()
            .zip(&s.sd)
            .map(|(b, sd)| if *sd > 0.0 { b / sd } else { 0.0 })
            .collect();
        let intercept = s.y_mean - slopes.iter().zip(&s.mean).map(|(b, m)| b * m).sum::<f64>();
        (intercept, slopes)
    }

    pub fn predict(&self, step: usize, x: &[f64]) -> f64 {
        let (b0, b) = self.original_scale(step);
        b0 + b.iter().zip(x).map(|(a, v)| a * v).sum::<f64>()
    }

    pub fn active_set(&self, step: usize) -> Vec<usize> {
        self.steps[step]
            .beta
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0.0)
            .map(|(j, _)| j)
            .collect()
    }

    /// `(1/n) X' r` on the standardised scale at `step`.
    pub fn gradient(&self, step: usize) -> Vec<f64> {
        let n = self.yc.len() as f64;
        let beta = &self.steps[step].beta;
        let resid: Vec<f64> = (0..self.yc.len())
            .map(|i| {
                self.yc[i]
                    - self
                        .cols
                        .iter()
                        .zip(beta)
                        .map(|(c, b)| c[i] * b)
                        .sum::<f64>()
            })
            .collect();
        self.cols
            .iter()
            .map(|c| c.iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>() / n)
            .collect()
    }

    /// Largest `|gradient|` over all coefficients; at a solution it is at
    /// most `lambda`.
    pub fn kkt_max_gradient(&self, step: usize) -> f64 {
        self.gradient(step)
            .iter()
            .map(|g| g.abs())
            .fold(0.0, f64::max)
    }

    /// Objective `(1/2n)|r|^2 + lambda |beta|_1` at `step`.
    pub fn objective(&self, step: usize) -> f64 {
        objective(
            &self.cols,
            &self.yc,
            &self.steps[step].beta,
            self.steps[step].lambda,
        )
    }
}

fn objective(cols: &[Vec<f64>], yc: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let n = yc.len() as f64;
    let rss: f64 = (0..yc.len())
        .map(|i| (yc[i] - cols.iter().zip(beta).map(|(c, b)| c[i] * b).sum::<f64>()).powi(2))
        .sum();
    rss / (2.0 * n) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Cross-validated choice of penalty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LassoFit {
    pub path: LassoPath,
    pub folds: usize,
    /// Fold of each row.
    pub fold_of_row: Vec<usize>,
    pub cv_mean: Vec<f64>,
    pub cv_se: Vec<f64>,
    /// Path index with the lowest mean CV error.
    pub idx_min: usize,
    /// Largest penalty within one SE of the minimum.
    pub idx_1se: usize,
}

impl LassoFit {
    pub fn lambda_min(&self) -> f64 {
        self.path.steps[self.idx_min].lambda
    }

    pub fn lambda_1se(&self) -> f64 {
        self.path.steps[self.idx_1se].lambda
    }

    pub fn selected(&self, rule: SelectionRule) -> usize {
        match rule {
            SelectionRule::Min => self.idx_min,
            SelectionRule::OneSe => self.idx_1se,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    #[default]
    Min,
    OneSe,
}

/// k-fold CV over the full-data penalty sequence; folds are a seeded random
/// partition of rows.
pub fn cv_select(m: &DesignMatrix, cfg: &LassoConfig, seed: u64) -> Result<LassoFit> {
    let n = m.n_rows();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "cross-validation needs at least 3 rows, got {n}"
        )));
    }
    let mut folds = cfg.folds.max(2);
    if n < folds {
        log::warn!("only {n} rows; reducing CV folds from {folds} to {n}");
        folds = n;
    }
    let path = fit_lasso_path(m, None, cfg)?;
    let lambdas: Vec<f64> = path.steps.iter().map(|s| s.lambda).collect();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(seed));
    let mut fold_of_row = vec![0; n];
    for (pos, &row) in perm.iter().enumerate() {
        fold_of_row[row] = pos % folds;
    }
    let fold_of_row_ref = &fold_of_row;
    let errors: Vec<Vec<f64>> = (0..folds)
        .into_par_iter()
        .map(|k| -> Result<Vec<f64>> {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..n).partition(|&i| fold_of_row_ref[i] == k);
            let train = DesignMatrix {
                names: m.names.clone(),
                row_ids: train.iter().map(|&i| m.row_ids[i].clone()).collect(),
                x: train.iter().map(|&i| m.x[i].clone()).collect(),
                y: train.iter().map(|&i| m.y[i]).collect(),
                log_transformed: m.log_transformed.clone(),
                dropped_rows: Vec::new(),
                dropped_columns: Vec::new(),
            };
            let fold_path = fit_lasso_path(&train, Some(&lambdas), cfg)?;
            Ok((0..lambdas.len())
                .map(|s| {
                    test.iter()
                        .map(|&i| (fold_path.predict(s, &m.x[i]) - m.y[i]).powi(2))
                        .sum::<f64>()
                        / test.len() as f64
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let n_l = lambdas.len();
    let kf = folds as f64;
    let cv_mean: Vec<f64> = (0..n_l)
        .map(|s| errors.iter().map(|e| e[s]).sum::<f64>() / kf)
        .collect();
    let cv_se: Vec<f64> = (0..n_l)
        .map(|s| {
            let var = errors
                .iter()
                .map(|e| (e[s] - cv_mean[s]).powi(2))
                .sum::<f64>()
                / (kf - 1.0);
            (var / kf).sqrt()
        })
        .collect();
    let idx_min = (0..n_l).fold(0, |b, s| if cv_mean[s] < cv_mean[b] { s } else { b });
    let bound = cv_mean[idx_min] + cv_se[idx_min];
    let idx_1se = (0..=idx_min)
        .find(|&s| cv_mean[s] <= bound)
        .unwrap_or(idx_min);
    Ok(LassoFit {
        path,
        folds,
        fold_of_row,
        cv_mean,
        cv_se,
        idx_min,
        idx_1se,
    })
}

/// One row of the coefficient table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientRow {
    pub predictor: String,
    /// Standardised coefficient; `None` when not selected.
    pub coefficient: Option<f64>,
    pub log_transformed: bool,
}

pub fn coefficient_table(
    fit: &LassoFit,
    m: &DesignMatrix,
    rule: SelectionRule,
) -> Vec<CoefficientRow> {
    let step = &fit.path.steps[fit.selected(rule)];
    fit.path
        .names
        .iter()
        .zip(&step.beta)
        .enumerate()
        .map(|(j, (name, b))| CoefficientRow {
            predictor: name.clone(),
            coefficient: (*b != 0.0).then_some(*b),
            log_transformed: m.log_transformed.get(j).copied().unwrap_or(false),
        })
        .collect()
}

/// Coefficient CSV; unselected predictors show a dash.
pub fn write_coefficients_csv<W: Write>(w: W, rows: &[CoefficientRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["predictor", "coefficient", "selected", "log_transformed"])?;
    for r in rows {
        wtr.write_record([
            r.predictor.clone(),
            r.coefficient.map_or("-".to_string(), |c| format!("{c:.6}")),
            r.coefficient.is_some().to_string(),
            r.log_transformed.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn write_cv_curve_csv<W: Write>(w: W, fit: &LassoFit) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "lambda",
        "cv_mean",
        "cv_se",
        "active",
        "converged",
        "selected_min",
        "selected_1se",
    ])?;
    for (s, step) in fit.path.steps.iter().enumerate() {
        wtr.write_record([
            format!("{:.9e}", step.lambda),
            format!("{:.9e}", fit.cv_mean[s]),
            format!("{:.9e}", fit.cv_se[s]),
            fit.path.active_set(s).len().to_string(),
            step.converged.to_string(),
            (s == fit.idx_min).to_string(),
            (s == fit.idx_1se).to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))
}

/// Sign of every selected coefficient: `+1`, `-1`, or absent.
pub fn sign_summary(rows: &[CoefficientRow]) -> BTreeMap<String, i8> {
    rows.iter()
        .filter_map(|r| {
            r.coefficient
                .map(|c| (r.predictor.clone(), if c > 0.0 { 1 } else { -1 }))
        })
        .collect()
}
