//! Demand forecasters and their evaluation.
//!
//! Every forecaster is fitted on the first days of a series (the split is
//! temporal, never shuffled) and asked for the event count of a later
//! `(day, bin)`. Day indices refer to the shared [`Calendar`].

mod balance;
mod baseline;
mod evaluate;
mod forest;
pub mod kmeans;
mod mlp;
mod optim;
mod sarima;
mod weikl;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Calendar;

pub use balance::{balance, BalanceReport, BalanceRow};
pub use baseline::{fit_baseline, Baseline, BaselineVariant};
pub use evaluate::{
    best_methods, rmse, run_forecasts, summarize, CellRmse, ForecastConfig, ForecastReport,
    MethodSummary, TaggedRow, TaggedSeries,
};
pub use forest::{
    fit_random_forest, FeatureFolds, ForestConfig, RandomForest, RandomForestForecaster,
};
pub use mlp::{fit_mlp, MinMaxScaler, Mlp, MlpConfig, MlpForecaster};
pub use sarima::{fit_sarima, Sarima, SarimaConfig, SarimaForecaster, SarimaOrder};
pub use weikl::{fit_weikl, Weikl, WeiklCell, WeiklConfig, WeiklSlot};

/// Forecasting method tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "HA")]
    Ha,
    #[serde(rename = "HM")]
    Hm,
    #[serde(rename = "HA+")]
    HaPlus,
    #[serde(rename = "HM+")]
    HmPlus,
    #[serde(rename = "SARIMA")]
    Sarima,
    #[serde(rename = "RF")]
    Rf,
    #[serde(rename = "MLP")]
    Mlp,
    #[serde(rename = "WEIKL")]
    Weikl,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Ha,
        Method::Hm,
        Method::HaPlus,
        Method::HmPlus,
        Method::Sarima,
        Method::Rf,
        Method::Mlp,
        Method::Weikl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ha => "HA",
            Method::Hm => "HM",
            Method::HaPlus => "HA+",
            Method::HmPlus => "HM+",
            Method::Sarima => "SARIMA",
            Method::Rf => "RF",
            Method::Mlp => "MLP",
            Method::Weikl => "WEIKL",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "ha" => Method::Ha,
            "hm" => Method::Hm,
            "ha+" => Method::HaPlus,
            "hm+" => Method::HmPlus,
            "sarima" | "arima" => Method::Sarima,
            "rf" => Method::Rf,
            "mlp" | "nn" => Method::Mlp,
            "weikl" => Method::Weikl,
            other => {
                return Err(Error::invalid(format!(
                    "unknown forecasting method {other:?}"
                )))
            }
        })
    }
}

/// A fitted model that predicts the event count of one cell.
pub trait Forecaster: Send + Sync {
    fn method(&self) -> Method;

    /// Unclamped model output.
    fn predict_raw(&self, day: usize, bin: usize) -> f64;

    /// Prediction clamped to a finite non-negative count.
    fn predict(&self, day: usize, bin: usize) -> f64 {
        clamp_prediction(self.predict_raw(day, bin))
    }
}

/// Maps raw model output to a valid count: negatives and non-finite values
/// become 0.
pub fn clamp_prediction(x: f64) -> f64 {
    if x.is_finite() {
        x.max(0.0)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Share of days, earliest first, used for training.
    pub train_frac: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train_frac: 0.8 }
    }
}

pub const MIN_SPLIT_DAYS: usize = 5;

/// Temporal split of `n_days` consecutive days.
pub fn split_days(n_days: usize, spec: &SplitSpec) -> Result<(Range<usize>, Range<usize>)> {
    if n_days < MIN_SPLIT_DAYS {
        return Err(Error::InsufficientData(format!(
            "need at least {MIN_SPLIT_DAYS} days to split, got {n_days}"
        )));
    }
    if !(spec.train_frac > 0.0 && spec.train_frac < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction {} not in (0, 1)",
            spec.train_frac
        )));
    }
    let n_train = ((spec.train_frac * n_days as f64 + 1e-9).floor() as usize).clamp(1, n_days - 1);
    Ok((0..n_train, n_train..n_days))
}

/// Splits a set of dates, in any order, into sorted training and test dates.
pub fn split_dates(
    dates: &[NaiveDate],
    spec: &SplitSpec,
) -> Result<(Vec<NaiveDate>, Vec<NaiveDate>)> {
    let mut sorted = dates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let (train, test) = split_days(sorted.len(), spec)?;
    Ok((sorted[train].to_vec(), sorted[test].to_vec()))
}

/// History of one cell shared by the per-cell forecasters.
#[derive(Debug, Clone, Copy)]
pub struct CellHistory<'a> {
    /// Day-major counts over the whole calendar.
    pub counts: &'a [f64],
    pub bins_per_day: usize,
    pub calendar: &'a Calendar,
}

impl CellHistory<'_> {
    pub fn value(&self, day: usize, bin: usize) -> f64 {
        self.counts[day * self.bins_per_day + bin]
    }

    pub fn days(&self, days: Range<usize>) -> &[f64] {
        &self.counts[days.start * self.bins_per_day..days.end * self.bins_per_day]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        assert_eq!(
            split_days(45, &SplitSpec::default()).unwrap(),
            (0..36, 36..45)
        );
        assert_eq!(split_days(5, &SplitSpec::default()).unwrap(), (0..4, 4..5));
        assert!(split_days(4, &SplitSpec::default()).is_err());
    }

    #[test]
    fn split_keys_on_dates_not_order() {
        let first = NaiveDate::from_ymd_opt(2017, 1, 1).unwrap();
        let dates: Vec<NaiveDate> = first.iter_days().take(10).collect();
        let mut shuffled = dates.clone();
        shuffled.reverse();
        shuffled.swap(2, 7);
        let a = split_dates(&dates, &SplitSpec::default()).unwrap();
        let b = split_dates(&shuffled, &SplitSpec::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.0.iter().all(|d| a.1.iter().all(|t| d < t)));
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("tbats".parse::<Method>().is_err());
    }

    #[test]
    fn clamping() {
        assert_eq!(clamp_prediction(-0.3), 0.0);
        assert_eq!(clamp_prediction(f64::NAN), 0.0);
        assert_eq!(clamp_prediction(2.5), 2.5);
    }
}
