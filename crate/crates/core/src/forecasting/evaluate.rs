//! Fitting every requested method per cell and scoring it on the test days.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::ops::Range;
use std::sync::Arc;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::baseline::{fit_baseline, BaselineVariant};
use super::forest::{fit_random_forest, ForestConfig, RandomForestForecaster};
use super::mlp::{fit_mlp, MlpConfig, MlpForecaster};
use super::sarima::{fit_sarima, SarimaConfig, SarimaForecaster};
use super::weikl::{fit_weikl, Weikl, WeiklCell, WeiklConfig};
use super::{split_days, CellHistory, Forecaster, Method, SplitSpec};
use crate::error::{Error, Result};
use crate::features::{build_feature_table, EventSeriesSet, FeatureTable};
use crate::grid::{CellId, Grid};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastConfig {
    pub methods: Vec<Method>,
    pub split: SplitSpec,
    /// Queen-move radius of the neighbour-average feature.
    pub neighbor_hops: u32,
    pub forest: ForestConfig,
    pub mlp: MlpConfig,
    pub sarima: SarimaConfig,
    pub weikl: WeiklConfig,
    /// Cell whose predicted and observed series are reported in full.
    pub tagged_cell: Option<CellId>,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            methods: Method::ALL.to_vec(),
            split: SplitSpec::default(),
            neighbor_hops: 2,
            forest: ForestConfig::default(),
            mlp: MlpConfig::default(),
            sarima: SarimaConfig::default(),
            weikl: WeiklConfig::default(),
            tagged_cell: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRmse {
    pub cell: CellId,
    pub method: Method,
    pub rmse: f64,
    /// The method failed and HA predictions were scored instead.
    pub fallback: bool,
    /// Selected hyperparameters, e.g. the SARIMA order.
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub cells: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaggedRow {
    pub date: NaiveDate,
    pub day: usize,
    pub bin: usize,
    pub observed: f64,
    pub predicted: Vec<f64>,
}

/// Predicted-versus-observed test series of one cell, per method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaggedSeries {
    pub cell: CellId,
    pub methods: Vec<Method>,
    pub rows: Vec<TaggedRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecastReport {
    pub bin_minutes: u32,
    pub train_days: Range<usize>,
    pub test_days: Range<usize>,
    pub methods: Vec<Method>,
    /// Ordered by `(cell, method)`.
    pub rmse: Vec<CellRmse>,
    pub tagged: Option<TaggedSeries>,
}

/// Root mean squared error.
pub fn rmse(predicted: &[f64], observed: &[f64]) -> Result<f64> {
    if predicted.len() != observed.len() {
        return Err(Error::invalid("prediction and observation lengths differ"));
    }
    if observed.is_empty() {
        return Err(Error::InsufficientData("RMSE of an empty test set".into()));
    }
    let sse: f64 = predicted
        .iter()
        .zip(observed)
        .map(|(p, o)| (p - o).powi(2))
        .sum();
    Ok((sse / observed.len() as f64).sqrt())
}

/// Quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Distribution of per-cell RMSE for each method.
pub fn summarize(rows: &[CellRmse]) -> Vec<MethodSummary> {
    let mut by: BTreeMap<Method, Vec<&CellRmse>> = BTreeMap::new();
    for r in rows {
        by.entry(r.method).or_default().push(r);
    }
    by.into_iter()
        .map(|(method, rs)| {
            let mut v: Vec<f64> = rs.iter().map(|r| r.rmse).collect();
            v.sort_by(f64::total_cmp);
            MethodSummary {
                method,
                cells: v.len(),
                min: v[0],
                q1: quantile(&v, 0.25),
                median: quantile(&v, 0.5),
                q3: quantile(&v, 0.75),
                max: v[v.len() - 1],
                mean: v.iter().sum::<f64>() / v.len() as f64,
                fallbacks: rs.iter().filter(|r| r.fallback).count(),
            }
        })
        .collect()
}

/// Method with the lowest RMSE per cell; ties go to the earlier method in
/// [`Method::ALL`] order.
pub fn best_methods(rows: &[CellRmse]) -> Vec<(CellId, Method, f64)> {
    let mut best: BTreeMap<CellId, (Method, f64)> = BTreeMap::new();
    for r in rows {
        let e = best.entry(r.cell).or_insert((r.method, r.rmse));
        if r.rmse < e.1 || (r.rmse == e.1 && r.method < e.0) {
            *e = (r.method, r.rmse);
        }
    }
    best.into_iter().map(|(c, (m, e))| (c, m, e)).collect()
}

fn encoded_features(table: &FeatureTable, cell: CellId) -> BTreeMap<(usize, usize), Vec<f64>> {
    table
        .cell_rows(cell)
        .iter()
        .map(|r| ((r.day, r.bin), r.encode().to_vec()))
        .collect()
}

fn training_rows(
    table: &FeatureTable,
    cell: CellId,
    train: &Range<usize>,
) -> (Vec<Vec<f64>>, Vec<f64>, Vec<usize>) {
    let rows: Vec<_> = table
        .cell_rows(cell)
        .iter()
        .filter(|r| train.contains(&r.day))
        .collect();
    (
        rows.iter().map(|r| r.encode().to_vec()).collect(),
        rows.iter().map(|r| r.target).collect(),
        rows.iter().map(|r| r.day).collect(),
    )
}

struct Fitted {
    model: Box<dyn Forecaster>,
    fallback: bool,
    detail: String,
}

#[allow(clippy::too_many_arguments)]
fn fit_method(
    method: Method,
    cell: CellId,
    history: &CellHistory<'_>,
    train: &Range<usize>,
    test_days: usize,
    table: Option<&FeatureTable>,
    weikl: Option<&Arc<Weikl>>,
    cfg: &ForecastConfig,
    seed: u64,
) -> Result<Fitted> {
    let ha = || fit_baseline(history, train.clone(), BaselineVariant::Ha);
    let cell_seed = seed::derive(
        seed,
        &[seed::key(method.name()), cell.row as u64, cell.col as u64],
    );
    let ok = |model: Box<dyn Forecaster>, detail: String| {
        Ok(Fitted {
            model,
            fallback: false,
            detail,
        })
    };
    let fallback = |why: Error| -> Result<Fitted> {
        log::warn!("{method} failed for cell {cell}: {why}; using HA");
        Ok(Fitted {
            model: Box::new(ha()?),
            fallback: true,
            detail: why.to_string(),
        })
    };
    match method {
        Method::Ha | Method::Hm | Method::HaPlus | Method::HmPlus => {
            let variant = match method {
                Method::Ha => BaselineVariant::Ha,
                Method::Hm => BaselineVariant::Hm,
                Method::HaPlus => BaselineVariant::HaPlus,
                _ => BaselineVariant::HmPlus,
            };
            let b = fit_baseline(history, train.clone(), variant)?;
            let detail = if b.fell_back {
                "pooled fallback".to_string()
            } else {
                String::new()
            };
            ok(Box::new(b), detail)
        }
        Method::Sarima => match fit_sarima(
            history.days(train.clone()),
            history.bins_per_day,
            &cfg.sarima,
        ) {
            Ok(model) => {
                let detail = model.order.to_string();
                ok(
                    Box::new(SarimaForecaster::new(
                        model,
                        train.end,
                        history.bins_per_day,
                        test_days,
                    )),
                    detail,
                )
            }
            Err(e) => fallback(e),
        },
        Method::Rf => {
            let table = table.expect("feature table built for RF");
            let (x, y, g) = training_rows(table, cell, train);
            match fit_random_forest(&x, &y, &g, &cfg.forest, cell_seed) {
                Ok(rf) => {
                    let detail = format!("m={}", rf.m);
                    ok(
                        Box::new(RandomForestForecaster::new(
                            rf,
                            encoded_features(table, cell),
                        )),
                        detail,
                    )
                }
                Err(e) => fallback(e),
            }
        }
        Method::Mlp => {
            let table = table.expect("feature table built for MLP");
            let (x, y, g) = training_rows(table, cell, train);
            match fit_mlp(&x, &y, &g, &cfg.mlp, cell_seed) {
                Ok(m) => {
                    let detail = format!("hidden={}", m.hidden());
                    ok(
                        Box::new(MlpForecaster::new(m, encoded_features(table, cell))),
                        detail,
                    )
                }
                Err(e) => fallback(e),
            }
        }
        Method::Weikl => match weikl.and_then(|w| WeiklCell::new(Arc::clone(w), cell)) {
            Some(w) => ok(Box::new(w), String::new()),
            None => fallback(Error::InsufficientData("no WEIKL model for cell".into())),
        },
    }
}

/// Fits and scores every method in `cfg.methods` for every eligible cell
/// of `series`.
pub fn run_forecasts(
    series: &EventSeriesSet,
    grid: &Grid,
    eligible: &BTreeSet<CellId>,
    cfg: &ForecastConfig,
    seed: u64,
) -> Result<ForecastReport> {
    let n_days = series.calendar.len();
    let (train, test) = split_days(n_days, &cfg.split)?;
    let mut methods = cfg.methods.clone();
    methods.sort_unstable();
    methods.dedup();
    if methods.is_empty() {
        return Err(Error::invalid("no forecasting method selected"));
    }
    let cells: Vec<CellId> = series
        .cells()
        .into_iter()
        .filter(|c| eligible.contains(c))
        .collect();
    if cells.is_empty() {
        return Err(Error::InsufficientData(
            "no eligible cells to forecast".into(),
        ));
    }
    let needs_table = methods
        .iter()
        .any(|m| matches!(m, Method::Rf | Method::Mlp));
    let table = if needs_table {
        Some(build_feature_table(
            series,
            grid,
            &cells.iter().copied().collect(),
            cfg.neighbor_hops,
        )?)
    } else {
        None
    };
    let weikl = if methods.contains(&Method::Weikl) {
        match fit_weikl(
            series,
            &cells,
            train.clone(),
            &cfg.weikl,
            seed::derive(seed, &[seed::key("WEIKL")]),
        ) {
            Ok(w) => Some(Arc::new(w)),
            Err(e) => {
                log::warn!("WEIKL could not be fitted: {e}");
                None
            }
        }
    } else {
        None
    };
    let per_day = series.bins_per_day();
    let calendar = &series.calendar;
    if methods
        .iter()
        .any(|m| matches!(m, Method::HaPlus | Method::HmPlus))
    {
        let weekdays = train.clone().filter(|&d| calendar.is_weekday(d)).count();
        if weekdays == 0 || weekdays == train.len() {
            log::warn!(
                "training days cover only one weekday regime; HA+ and HM+ use the unsplit pool"
            );
        }
    }

    let per_cell: Vec<(Vec<CellRmse>, Option<TaggedSeries>)> = cells
        .par_iter()
        .map(|&cell| -> Result<_> {
            let counts = series
                .get(cell)
                .expect("cell taken from the series")
                .to_f64();
            let history = CellHistory {
                counts: &counts,
                bins_per_day: per_day,
                calendar,
            };
            let observed: Vec<f64> = test
                .clone()
                .flat_map(|d| (0..per_day).map(move |b| (d, b)))
                .map(|(d, b)| history.value(d, b))
                .collect();
            let mut rows = Vec::with_capacity(methods.len());
            let mut predictions = Vec::with_capacity(methods.len());
            for &method in &methods {
                let fitted = fit_method(
                    method,
                    cell,
                    &history,
                    &train,
                    test.len(),
                    table.as_ref(),
                    weikl.as_ref(),
                    cfg,
                    seed,
                )?;
                let pred: Vec<f64> = test
                    .clone()
                    .flat_map(|d| (0..per_day).map(move |b| (d, b)))
                    .map(|(d, b)| fitted.model.predict(d, b))
                    .collect();
                rows.push(CellRmse {
                    cell,
                    method,
                    rmse: rmse(&pred, &observed)?,
                    fallback: fitted.fallback,
                    detail: fitted.detail,
                });
                predictions.push(pred);
            }
            let tagged = (cfg.tagged_cell == Some(cell)).then(|| TaggedSeries {
                cell,
                methods: methods.clone(),
                rows: test
                    .clone()
                    .flat_map(|d| (0..per_day).map(move |b| (d, b)))
                    .enumerate()
                    .map(|(i, (day, bin))| TaggedRow {
                        date: calendar.days[day],
                        day,
                        bin,
                        observed: observed[i],
                        predicted: predictions.iter().map(|p| p[i]).collect(),
                    })
                    .collect(),
            });
            Ok((rows, tagged))
        })
        .collect::<Result<_>>()?;

    let mut rmse_rows = Vec::new();
    let mut tagged = None;
    for (rows, t) in per_cell {
        rmse_rows.extend(rows);
        tagged = tagged.or(t);
    }
    if let (Some(c), None) = (cfg.tagged_cell, &tagged) {
        log::warn!("tagged cell {c} is not among the forecast cells");
    }
    Ok(ForecastReport {
        bin_minutes: series.bin_minutes,
        train_days: train,
        test_days: test,
        methods,
        rmse: rmse_rows,
        tagged,
    })
}

fn flush<W: Write>(mut wtr: csv::Writer<W>) -> Result<()> {
    wtr.flush().map_err(|e| Error::io("<csv>", e))
}

impl ForecastReport {
    pub fn summaries(&self) -> Vec<MethodSummary> {
        summarize(&self.rmse)
    }

    pub fn median_rmse(&self, method: Method) -> Option<f64> {
        self.summaries()
            .into_iter()
            .find(|s| s.method == method)
            .map(|s| s.median)
    }

    pub fn write_rmse_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["row", "col", "method", "rmse", "fallback", "detail"])?;
        for r in &self.rmse {
            wtr.write_record([
                r.cell.row.to_string(),
                r.cell.col.to_string(),
                r.method.to_string(),
                format!("{:.6}", r.rmse),
                r.fallback.to_string(),
                r.detail.clone(),
            ])?;
        }
        flush(wtr)
    }

    pub fn write_best_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["row", "col", "best_method", "rmse"])?;
        for (c, m, e) in best_methods(&self.rmse) {
            wtr.write_record([
                c.row.to_string(),
                c.col.to_string(),
                m.to_string(),
                format!("{e:.6}"),
            ])?;
        }
        flush(wtr)
    }

    pub fn write_tagged_csv<W: Write>(&self, w: W) -> Result<()> {
        let Some(t) = &self.tagged else {
            return Err(Error::invalid("no tagged cell in this report"));
        };
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec![
            "date".to_string(),
            "day".into(),
            "bin".into(),
            "observed".into(),
        ];
        header.extend(t.methods.iter().map(|m| m.to_string()));
        wtr.write_record(&header)?;
        for r in &t.rows {
            let mut rec = vec![
                r.date.to_string(),
                r.day.to_string(),
                r.bin.to_string(),
                r.observed.to_string(),
            ];
            rec.extend(r.predicted.iter().map(|p| format!("{p:.6}")));
            wtr.write_record(&rec)?;
        }
        flush(wtr)
    }

    /// Per-method RMSE distributions and best-method counts.
    pub fn summary_json(&self) -> Value {
        let mut counts: BTreeMap<String, usize> =
            self.methods.iter().map(|m| (m.to_string(), 0)).collect();
        for (_, m, _) in best_methods(&self.rmse) {
            *counts.entry(m.to_string()).or_default() += 1;
        }
        let round = |v: f64| (v * 1e6).round() / 1e6;
        let summaries: Vec<Value> = self
            .summaries()
            .iter()
            .map(|s| {
                let values: Vec<f64> = self
                    .rmse
                    .iter()
                    .filter(|r| r.method == s.method)
                    .map(|r| round(r.rmse))
                    .collect();
                json!({
                    "method": s.method,
                    "cells": s.cells,
                    "min": round(s.min),
                    "q1": round(s.q1),
                    "median": round(s.median),
                    "q3": round(s.q3),
                    "max": round(s.max),
                    "mean": round(s.mean),
                    "fallbacks": s.fallbacks,
                    "values": values,
                })
            })
            .collect();
        json!({
            "bin_minutes": self.bin_minutes,
            "train_days": [self.train_days.start, self.train_days.end],
            "test_days": [self.test_days.start, self.test_days.end],
            "methods": summaries,
            "best_method_counts": counts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_cases() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0; 4], &[1.0; 4]).unwrap(), 1.0);
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn quartiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
    }

    #[test]
    fn best_method_ties_prefer_simpler() {
        let c = CellId::new(0, 0);
        let row = |method, rmse| CellRmse {
            cell: c,
            method,
            rmse,
            fallback: false,
            detail: String::new(),
        };
        let rows = vec![
            row(Method::Rf, 1.0),
            row(Method::Ha, 1.0),
            row(Method::Sarima, 2.0),
        ];
        assert_eq!(best_methods(&rows), vec![(c, Method::Ha, 1.0)]);
    }
}
