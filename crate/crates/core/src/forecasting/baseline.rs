use std::ops::Range;

use super::{CellHistory, Forecaster, Method};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineVariant {
    /// Historical average per bin.
    Ha,
    /// Historical median per bin.
    Hm,
    /// Average, pooled separately over weekdays and weekend days.
    HaPlus,
    /// Median, pooled separately over weekdays and weekend days.
    HmPlus,
}

impl BaselineVariant {
    pub fn method(self) -> Method {
        match self {
            BaselineVariant::Ha => Method::Ha,
            BaselineVariant::Hm => Method::Hm,
            BaselineVariant::HaPlus => Method::HaPlus,
            BaselineVariant::HmPlus => Method::HmPlus,
        }
    }

    fn uses_median(self) -> bool {
        matches!(self, BaselineVariant::Hm | BaselineVariant::HmPlus)
    }

    fn splits_week(self) -> bool {
        matches!(self, BaselineVariant::HaPlus | BaselineVariant::HmPlus)
    }
}

/// Per-bin profile model.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub variant: BaselineVariant,
    /// Profile used for weekdays (or every day for the unsplit variants).
    pub weekday: Vec<f64>,
    /// Profile used for weekend days.
    pub weekend: Vec<f64>,
    weekday_flags: Vec<bool>,
    /// Set when a split variant lacked one of the pools.
    pub fell_back: bool,
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn profile(h: &CellHistory<'_>, days: &[usize], median_of: bool) -> Vec<f64> {
    (0..h.bins_per_day)
        .map(|bin| {
            let mut xs: Vec<f64> = days.iter().map(|&d| h.value(d, bin)).collect();
            if median_of {
                median(&mut xs)
            } else {
                xs.iter().sum::<f64>() / xs.len() as f64
            }
        })
        .collect()
}

pub fn fit_baseline(
    h: &CellHistory<'_>,
    train: Range<usize>,
    variant: BaselineVariant,
) -> Result<Baseline> {
    if train.is_empty() {
        return Err(Error::InsufficientData(
            "baseline needs at least one training day".into(),
        ));
    }
    let all: Vec<usize> = train.clone().collect();
    let weekday_flags: Vec<bool> = (0..h.calendar.len())
        .map(|d| h.calendar.is_weekday(d))
        .collect();
    let med = variant.uses_median();
    if !variant.splits_week() {
        let p = profile(h, &all, med);
        return Ok(Baseline {
            variant,
            weekend: p.clone(),
            weekday: p,
            weekday_flags,
            fell_back: false,
        });
    }
    let (wk, we): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&d| weekday_flags[d]);
    let mut fell_back = false;
    let pooled = |days: &[usize], fell_back: &mut bool| {
        if days.is_empty() {
            *fell_back = true;
            profile(h, &all, med)
        } else {
            profile(h, days, med)
        }
    };
    let weekday = pooled(&wk, &mut fell_back);
    let weekend = pooled(&we, &mut fell_back);
    if fell_back {
        log::debug!(
            "{} lacks weekday or weekend training days; using the unsplit pool",
            variant.method()
        );
    }
    Ok(Baseline {
        variant,
        weekday,
        weekend,
        weekday_flags,
        fell_back,
    })
}

impl Forecaster for Baseline {
    fn method(&self) -> Method {
        self.variant.method()
    }

    fn predict_raw(&self, day: usize, bin: usize) -> f64 {
        if self.weekday_flags.get(day).copied().unwrap_or(true) {
            self.weekday[bin]
        } else {
            self.weekend[bin]
        }
    }
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;

    use super::*;
    use crate::features::Calendar;

    fn cal(days: usize) -> Calendar {
        // 2017-01-02 is a Monday.
        Calendar::new(
            chrono_tz::UTC,
            NaiveDate::from_ymd_opt(2017, 1, 2).unwrap(),
            days,
        )
    }

    #[test]
    fn constant_series() {
        let c = cal(7);
        let counts = vec![3.0; 7 * 4];
        let h = CellHistory {
            counts: &counts,
            bins_per_day: 4,
            calendar: &c,
        };
        for v in [
            BaselineVariant::Ha,
            BaselineVariant::Hm,
            BaselineVariant::HaPlus,
            BaselineVariant::HmPlus,
        ] {
            let m = fit_baseline(&h, 0..7, v).unwrap();
            assert!((0..7).all(|d| (0..4).all(|b| m.predict(d, b) == 3.0)));
        }
    }

    #[test]
    fn mean_versus_median() {
        let c = cal(4);
        // one bin per day, training values 0, 0, 0, 9
        let counts = vec![0.0, 0.0, 0.0, 9.0];
        let h = CellHistory {
            counts: &counts,
            bins_per_day: 1,
            calendar: &c,
        };
        assert_eq!(
            fit_baseline(&h, 0..4, BaselineVariant::Ha)
                .unwrap()
                .predict(0, 0),
            2.25
        );
        assert_eq!(
            fit_baseline(&h, 0..4, BaselineVariant::Hm)
                .unwrap()
                .predict(0, 0),
            0.0
        );
    }

    #[test]
    fn plus_variants_pool_by_day_type() {
        let c = cal(14);
        let counts: Vec<f64> = (0..14)
            .map(|d| if c.is_weekday(d) { 4.0 } else { 1.0 })
            .collect();
        let h = CellHistory {
            counts: &counts,
            bins_per_day: 1,
            calendar: &c,
        };
        let m = fit_baseline(&h, 0..14, BaselineVariant::HaPlus).unwrap();
        assert_eq!(m.predict(7, 0), 4.0); // Monday
        assert_eq!(m.predict(13, 0), 1.0); // Sunday
        let plain = fit_baseline(&h, 0..14, BaselineVariant::Ha).unwrap();
        assert!((plain.predict(7, 0) - (40.0 + 4.0) / 14.0).abs() < 1e-12);
    }

    #[test]
    fn missing_weekend_pool_falls_back() {
        let c = cal(5); // Monday..Friday
        let counts = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let h = CellHistory {
            counts: &counts,
            bins_per_day: 1,
            calendar: &c,
        };
        let m = fit_baseline(&h, 0..5, BaselineVariant::HmPlus).unwrap();
        assert!(m.fell_back);
        assert_eq!(m.weekend, vec![3.0]);
    }

    #[test]
    fn empty_training_is_error() {
        let c = cal(2);
        let counts = vec![1.0, 2.0];
        let h = CellHistory {
            counts: &counts,
            bins_per_day: 1,
            calendar: &c,
        };
        assert!(fit_baseline(&h, 0..0, BaselineVariant::Ha).is_err());
    }
}
