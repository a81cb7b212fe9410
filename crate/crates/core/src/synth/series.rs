use std::collections::BTreeSet;

use chrono::NaiveDate;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::bump;
use crate::error::{Error, Result};
use crate::features::{bins_per_day, Calendar, EventKind, EventSeries, EventSeriesSet, TzName};
use crate::geometry::LonLat;
use crate::grid::{CellId, Grid};
use crate::ingest::OperationArea;
use crate::seed;

/// Pickup counts drawn straight from a seasonal Poisson process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeriesScenario {
    pub n_cells: usize,
    pub days: usize,
    pub bin_minutes: u32,
    pub start_date: NaiveDate,
    pub timezone: TzName,
    /// Range of the per-cell mean rate per bin.
    pub min_rate: f64,
    pub max_rate: f64,
    /// 0 gives a flat day; 1 puts all demand in the rush-hour shape.
    pub daily_amplitude: f64,
    /// Weekday to weekend demand ratio.
    pub weekday_ratio: f64,
    /// Weekends follow a single midday peak instead of two rush hours.
    pub weekend_shape: bool,
    pub cell_side_m: f64,
    pub seed: u64,
}

impl Default for SeriesScenario {
    fn default() -> Self {
        SeriesScenario {
            n_cells: 50,
            days: 45,
            bin_minutes: 60,
            // a Monday
            start_date: NaiveDate::from_ymd_opt(2017, 1, 2).unwrap(),
            timezone: TzName("UTC".into()),
            min_rate: 1.0,
            max_rate: 8.0,
            daily_amplitude: 0.8,
            weekday_ratio: 3.0,
            weekend_shape: true,
            cell_side_m: 500.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSeries {
    pub grid: Grid,
    pub series: EventSeriesSet,
    pub cells: BTreeSet<CellId>,
    /// True rate per cell, aligned with `series.series`.
    pub rates: Vec<Vec<f64>>,
}

/// Daily shape with mean 1 over the day.
fn daily_shape(per_day: usize, weekend: bool, amplitude: f64, phase_h: f64) -> Vec<f64> {
    let hours: Vec<f64> = (0..per_day)
        .map(|b| (b as f64 + 0.5) * 24.0 / per_day as f64 + phase_h)
        .collect();
    let raw: Vec<f64> = hours
        .iter()
        .map(|&h| {
            if weekend {
                0.15 + bump(h, 13.0, 3.0)
            } else {
                0.15 + bump(h, 8.0, 1.5) + bump(h, 18.0, 1.5)
            }
        })
        .collect();
    let mean = raw.iter().sum::<f64>() / per_day as f64;
    raw.iter()
        .map(|r| (1.0 - amplitude) + amplitude * r / mean)
        .collect()
}

pub fn generate_series(sc: &SeriesScenario) -> Result<SyntheticSeries> {
    let per_day = bins_per_day(sc.bin_minutes)?;
    if sc.n_cells == 0 || sc.days == 0 {
        return Err(Error::invalid("series scenario needs cells and days"));
    }
    if !(sc.min_rate >= 0.0
        && sc.max_rate >= sc.min_rate
        && sc.weekday_ratio > 0.0
        && (0.0..=1.0).contains(&sc.daily_amplitude))
    {
        return Err(Error::invalid("series scenario rates out of range"));
    }
    let cols = (sc.n_cells as f64).sqrt().ceil() as usize;
    let rows = sc.n_cells.div_ceil(cols);
    let km = sc.cell_side_m / 1000.0;
    let area = OperationArea::rectangle_km(
        "series",
        LonLat::new(9.19, 45.46),
        cols as f64 * km,
        rows as f64 * km,
    )?;
    let grid = Grid::build(&area, sc.cell_side_m)?;
    let cells: Vec<CellId> = grid.active.iter().copied().take(sc.n_cells).collect();
    if cells.len() < sc.n_cells {
        return Err(Error::Geometry("series grid has too few cells".into()));
    }
    let calendar = Calendar::new(sc.timezone.parse()?, sc.start_date, sc.days);
    let mut rng = seed::rng(seed::derive(sc.seed, &[seed::key("series")]));
    let norm = (5.0 * sc.weekday_ratio + 2.0) / 7.0;
    let mut series = Vec::with_capacity(cells.len());
    let mut rates = Vec::with_capacity(cells.len());
    for &cell in &cells {
        let base = rng.gen_range(sc.min_rate..=sc.max_rate);
        let phase = rng.gen_range(-1.0..1.0);
        let weekday = daily_shape(per_day, false, sc.daily_amplitude, phase);
        let weekend = daily_shape(per_day, sc.weekend_shape, sc.daily_amplitude, phase);
        let mut s = EventSeries::zeros(cell, EventKind::Pickup, sc.bin_minutes, sc.days)?;
        let mut lambda = Vec::with_capacity(per_day * sc.days);
        for d in 0..sc.days {
            let (shape, level) = if calendar.is_weekday(d) {
                (&weekday, sc.weekday_ratio)
            } else {
                (&weekend, 1.0)
            };
            for b in 0..per_day {
                let l = base * level / norm * shape[b];
                s.counts[d * per_day + b] = if l > 0.0 {
                    Poisson::new(l).unwrap().sample(&mut rng) as u32
                } else {
                    0
                };
                lambda.push(l);
            }
        }
        series.push(s);
        rates.push(lambda);
    }
    Ok(SyntheticSeries {
        grid,
        cells: cells.iter().copied().collect(),
        series: EventSeriesSet {
            kind: EventKind::Pickup,
            bin_minutes: sc.bin_minutes,
            calendar,
            series,
            unassigned: 0,
        },
        rates,
    })
}

/// Adds `magnitude` events to `count` random (cell, slot) positions and
/// returns them.
pub fn plant_outliers(
    set: &mut EventSeriesSet,
    count: usize,
    magnitude: u32,
    seed: u64,
) -> Vec<(CellId, usize)> {
    let mut rng = seed::rng(seed::derive(seed, &[seed::key("outliers")]));
    let mut out = Vec::with_capacity(count);
    if set.series.is_empty() {
        return out;
    }
    for _ in 0..count {
        let s = rng.gen_range(0..set.series.len());
        let series = &mut set.series[s];
        let i = rng.gen_range(0..series.counts.len());
        series.counts[i] += magnitude;
        out.push((series.cell, i));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_rate_mean_within_three_se() {
        let sc = SeriesScenario {
            n_cells: 1,
            days: 30,
            bin_minutes: 30,
            min_rate: 2.0,
            max_rate: 2.0,
            daily_amplitude: 0.0,
            weekday_ratio: 1.0,
            weekend_shape: false,
            ..Default::default()
        };
        let s = generate_series(&sc).unwrap();
        let x = s.series.series[0].to_f64();
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        assert!((mean - 2.0).abs() < 3.0 * (2.0 / n).sqrt(), "{mean}");
        assert!(s.rates[0].iter().all(|r| (r - 2.0).abs() < 1e-12));
    }

    #[test]
    fn weekday_regime_ratio() {
        let s = generate_series(&SeriesScenario {
            n_cells: 4,
            days: 14,
            ..Default::default()
        })
        .unwrap();
        let cal = &s.series.calendar;
        let per_day = s.series.bins_per_day();
        let rate = &s.rates[0];
        let day_total = |d: usize| rate[d * per_day..(d + 1) * per_day].iter().sum::<f64>();
        let wd = (0..14)
            .filter(|&d| cal.is_weekday(d))
            .map(day_total)
            .sum::<f64>()
            / 10.0;
        let we = (0..14)
            .filter(|&d| !cal.is_weekday(d))
            .map(day_total)
            .sum::<f64>()
            / 4.0;
        assert!((wd / we - 3.0).abs() < 1e-9);
    }

    #[test]
    fn outliers_are_added() {
        let mut s = generate_series(&SeriesScenario {
            n_cells: 3,
            days: 7,
            ..Default::default()
        })
        .unwrap();
        let before = s.series.total();
        let planted = plant_outliers(&mut s.series, 5, 50, 3);
        assert_eq!(planted.len(), 5);
        assert_eq!(s.series.total(), before + 250);
    }
}
