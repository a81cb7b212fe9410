//! City-wide day-regime forecaster.
//!
//! For every timeslot the training days are points in cell space. They are
//! projected onto their first two principal components and grouped by
//! k-means, with k chosen by the gap statistic. Each group stores how demand
//! moved on to the next timeslot, per cell. A forecast matches the observed
//! demand of the previous timeslot to its nearest group and adds that
//! group's expected variation.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kmeans::{gap_statistic, nearest, GapConfig};
use super::{Forecaster, Method};
use crate::error::{Error, Result};
use crate::features::EventSeriesSet;
use crate::grid::CellId;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeiklConfig {
    pub k_max: usize,
    pub gap_refs: usize,
    pub kmeans_restarts: usize,
}

impl Default for WeiklConfig {
    fn default() -> Self {
        WeiklConfig {
            k_max: 8,
            gap_refs: 50,
            kmeans_restarts: 10,
        }
    }
}

/// State of one timeslot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeiklSlot {
    /// Per-cell mean over training days, the PCA centre.
    pub mean: Vec<f64>,
    /// First two principal axes in cell space.
    pub basis: [Vec<f64>; 2],
    /// Group centroids in PCA coordinates, ordered by ascending demand.
    pub centroids: Vec<Vec<f64>>,
    /// Group of every training day.
    pub day_groups: Vec<usize>,
    /// Transition probabilities from this slot's groups to the next slot's.
    pub from_to: Vec<Vec<f64>>,
    /// Expected per-cell change to the next slot, by group.
    pub variation: Vec<Vec<f64>>,
}

impl WeiklSlot {
    fn project(&self, x: &[f64]) -> Vec<f64> {
        self.basis
            .iter()
            .map(|axis| {
                axis.iter()
                    .zip(x)
                    .zip(&self.mean)
                    .map(|((a, v), m)| a * (v - m))
                    .sum()
            })
            .collect()
    }

    pub fn n_groups(&self) -> usize {
        self.centroids.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weikl {
    pub cells: Vec<CellId>,
    pub bins_per_day: usize,
    pub train: Range<usize>,
    pub slots: Vec<WeiklSlot>,
    /// Observed counts per cell over the whole calendar, day-major.
    counts: Vec<Vec<f64>>,
}

impl Weikl {
    fn observed(&self, day: usize, bin: usize) -> Vec<f64> {
        self.counts
            .iter()
            .map(|c| c[day * self.bins_per_day + bin])
            .collect()
    }

    /// One-step-ahead forecast for all cells at `(day, bin)`, from the
    /// observed counts of the preceding timeslot.
    pub fn predict_all(&self, day: usize, bin: usize) -> Option<Vec<f64>> {
        let (pd, pb) = if bin > 0 {
            (day, bin - 1)
        } else {
            (day.checked_sub(1)?, self.bins_per_day - 1)
        };
        if pd * self.bins_per_day + pb >= self.counts.first()?.len() {
            return None;
        }
        let slot = &self.slots[pb];
        let prev = self.observed(pd, pb);
        let g = nearest(&slot.centroids, &slot.project(&prev));
        Some(
            prev.iter()
                .zip(&slot.variation[g])
                .map(|(v, dv)| v + dv)
                .collect(),
        )
    }

    pub fn predict_cell(&self, cell: usize, day: usize, bin: usize) -> f64 {
        self.predict_all(day, bin).map_or(f64::NAN, |v| v[cell])
    }

    pub fn cell_index(&self, cell: CellId) -> Option<usize> {
        self.cells.binary_search(&cell).ok()
    }
}

/// Top two principal axes of the centred rows of `x` (days x cells).
fn principal_axes(x: &DMatrix<f64>) -> [Vec<f64>; 2] {
    let n_cells = x.ncols();
    let zero = || vec![0.0; n_cells];
    if x.nrows() < 2 || n_cells == 0 {
        return [zero(), zero()];
    }
    let svd = x.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let axis = |rank: usize| -> Vec<f64> {
        match order.get(rank) {
            Some(&i) if svd.singular_values[i] > 1e-9 => {
                let mut v: Vec<f64> = v_t.row(i).iter().copied().collect();
                // fix the sign so the largest loading is positive
                let lead = v
                    .iter()
                    .copied()
                    .fold(0.0f64, |m, a| if a.abs() > m.abs() { a } else { m });
                if lead < 0.0 {
                    v.iter_mut().for_each(|a| *a = -*a);
                }
                v
            }
            _ => zero(),
        }
    };
    [axis(0), axis(1)]
}

struct SlotFit {
    mean: Vec<f64>,
    basis: [Vec<f64>; 2],
    centroids: Vec<Vec<f64>>,
    day_groups: Vec<usize>,
}

fn fit_slot(day_vectors: &[Vec<f64>], cfg: &WeiklConfig, seed: u64) -> SlotFit {
    let n_days = day_vectors.len();
    let n_cells = day_vectors[0].len();
    let mean: Vec<f64> = (0..n_cells)
        .map(|c| day_vectors.iter().map(|v| v[c]).sum::<f64>() / n_days as f64)
        .collect();
    let centred = DMatrix::from_fn(n_days, n_cells, |d, c| day_vectors[d][c] - mean[c]);
    let basis = principal_axes(&centred);
    let points: Vec<Vec<f64>> = day_vectors
        .iter()
        .map(|v| {
            basis
                .iter()
                .map(|a| {
                    a.iter()
                        .zip(v)
                        .zip(&mean)
                        .map(|((a, x), m)| a * (x - m))
                        .sum()
                })
                .collect()
        })
        .collect();
    let gap = gap_statistic(
        &points,
        &GapConfig {
            k_max: cfg.k_max,
            n_refs: cfg.gap_refs,
            n_init: cfg.kmeans_restarts,
        },
        seed,
    );
    // Relabel groups by ascending total demand so labels are canonical.
    let k = gap.k;
    let totals: Vec<f64> = (0..k)
        .map(|g| {
            let members: Vec<&Vec<f64>> = day_vectors
                .iter()
                .zip(&gap.fit.labels)
                .filter(|(_, &l)| l == g)
                .map(|(v, _)| v)
                .collect();
            members.iter().map(|v| v.iter().sum::<f64>()).sum::<f64>() / members.len().max(1) as f64
        })
        .collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| totals[a].total_cmp(&totals[b]).then(a.cmp(&b)));
    let mut relabel = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new;
    }
    SlotFit {
        mean,
        basis,
        centroids: order
            .iter()
            .map(|&g| gap.fit.centroids[g].clone())
            .collect(),
        day_groups: gap.fit.labels.iter().map(|&l| relabel[l]).collect(),
    }
}

/// Fits the model on the `train` days of every series in `series`.
pub fn fit_weikl(
    series: &EventSeriesSet,
    cells: &[CellId],
    train: Range<usize>,
    cfg: &WeiklConfig,
    seed: u64,
) -> Result<Weikl> {
    if train.len() < 2 {
        return Err(Error::InsufficientData(
            "WEIKL needs at least 2 training days".into(),
        ));
    }
    let mut cells = cells.to_vec();
    cells.sort_unstable();
    cells.dedup();
    if cells.is_empty() {
        return Err(Error::InsufficientData(
            "WEIKL needs at least one cell".into(),
        ));
    }
    let counts: Vec<Vec<f64>> = cells
        .iter()
        .map(|c| {
            series
                .get(*c)
                .map(|s| s.to_f64())
                .ok_or_else(|| Error::invalid(format!("no series for cell {c}")))
        })
        .collect::<Result<_>>()?;
    let per_day = series.bins_per_day();
    if train.end > series.calendar.len() {
        return Err(Error::invalid("training range beyond the calendar"));
    }
    let days: Vec<usize> = train.clone().collect();
    let vector = |d: usize, b: usize| {
        counts
            .iter()
            .map(|c| c[d * per_day + b])
            .collect::<Vec<f64>>()
    };

    let fits: Vec<SlotFit> = (0..per_day)
        .into_par_iter()
        .map(|b| {
            let vs: Vec<Vec<f64>> = days.iter().map(|&d| vector(d, b)).collect();
            fit_slot(
                &vs,
                cfg,
                seed::derive(seed, &[seed::key("weikl"), b as u64]),
            )
        })
        .collect();

    let mut slots = Vec::with_capacity(per_day);
    for b in 0..per_day {
        let fit = &fits[b];
        let k = fit.centroids.len();
        let (next_bin, day_shift) = if b + 1 < per_day { (b + 1, 0) } else { (0, 1) };
        let next = &fits[next_bin];
        let mut from_to = vec![vec![0.0; next.centroids.len()]; k];
        let mut variation = vec![vec![0.0; cells.len()]; k];
        let mut n_from = vec![0usize; k];
        for (i, &d) in days.iter().enumerate() {
            let j = i + day_shift;
            if j >= days.len() {
                continue;
            }
            let g = fit.day_groups[i];
            from_to[g][next.day_groups[j]] += 1.0;
            n_from[g] += 1;
            let (cur, nxt) = (vector(d, b), vector(days[j], next_bin));
            for (acc, (a, b)) in variation[g].iter_mut().zip(nxt.iter().zip(&cur)) {
                *acc += a - b;
            }
        }
        for g in 0..k {
            if n_from[g] == 0 {
                // no observed successor: uniform row, no variation
                let w = 1.0 / from_to[g].len() as f64;
                from_to[g].iter_mut().for_each(|v| *v = w);
            } else {
                let n = n_from[g] as f64;
                from_to[g].iter_mut().for_each(|v| *v /= n);
                variation[g].iter_mut().for_each(|v| *v /= n);
            }
        }
        slots.push(WeiklSlot {
            mean: fit.mean.clone(),
            basis: fit.basis.clone(),
            centroids: fit.centroids.clone(),
            day_groups: fit.day_groups.clone(),
            from_to,
            variation,
        });
    }
    Ok(Weikl {
        cells,
        bins_per_day: per_day,
        train,
        slots,
        counts,
    })
}

/// View of a fitted [`Weikl`] model for one cell.
#[derive(Debug, Clone)]
pub struct WeiklCell {
    model: Arc<Weikl>,
    index: usize,
}

impl WeiklCell {
    pub fn new(model: Arc<Weikl>, cell: CellId) -> Option<Self> {
        let index = model.cell_index(cell)?;
        Some(WeiklCell { model, index })
    }
}

impl Forecaster for WeiklCell {
    fn method(&self) -> Method {
        Method::Weikl
    }

    fn predict_raw(&self, day: usize, bin: usize) -> f64 {
        self.model.predict_cell(self.index, day, bin)
    }
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;

    use super::*;
    use crate::features::{Calendar, EventKind, EventSeries};

    fn series_set(counts: Vec<Vec<u32>>, n_days: usize, bin_minutes: u32) -> EventSeriesSet {
        let calendar = Calendar::new(
            chrono_tz::UTC,
            NaiveDate::from_ymd_opt(2017, 1, 2).unwrap(),
            n_days,
        );
        let series = counts
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                let mut s = EventSeries::zeros(
                    CellId::new(0, i as u32),
                    EventKind::Pickup,
                    bin_minutes,
                    n_days,
                )
                .unwrap();
                s.counts = c;
                s
            })
            .collect();
        EventSeriesSet {
            kind: EventKind::Pickup,
            bin_minutes,
            calendar,
            series,
            unassigned: 0,
        }
    }

    fn fast() -> WeiklConfig {
        WeiklConfig {
            gap_refs: 20,
            kmeans_restarts: 3,
            ..Default::default()
        }
    }

    #[test]
    fn identical_days_reproduce_pattern() {
        let per_day = 4; // 360-minute bins
        let pattern = [[1, 5, 3, 0], [2, 2, 7, 1], [0, 0, 4, 4]];
        let n_days = 6;
        let counts: Vec<Vec<u32>> = pattern
            .iter()
            .map(|p| (0..n_days).flat_map(|_| p.iter().copied()).collect())
            .collect();
        let set = series_set(counts, n_days, 360);
        let cells = set.cells();
        let m = fit_weikl(&set, &cells, 0..4, &fast(), 1).unwrap();
        assert!(m.slots.iter().all(|s| s.n_groups() == 1));
        for day in 4..6 {
            for bin in 0..per_day {
                let pred = m.predict_all(day, bin).unwrap();
                for (c, p) in pattern.iter().enumerate() {
                    assert!((pred[c] - p[bin] as f64).abs() < 1e-9);
                }
            }
        }
        assert!(m.slots.iter().all(|s| s
            .from_to
            .iter()
            .all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-12)));
    }

    #[test]
    fn two_regimes_give_two_groups() {
        // Regime alternates in blocks of days; high days carry 3x demand.
        let n_days = 24;
        let per_day = 4;
        let high = |d: usize| (d / 3).is_multiple_of(2);
        let mut rng = seed::rng(3);
        let counts: Vec<Vec<u32>> = (0..12)
            .map(|c| {
                (0..n_days * per_day)
                    .map(|t| {
                        let base = if high(t / per_day) { 30.0 } else { 10.0 } + c as f64;
                        (base + rand::Rng::gen_range(&mut rng, -1.0..1.0)).round() as u32
                    })
                    .collect()
            })
            .collect();
        let set = series_set(counts, n_days, 360);
        let m = fit_weikl(&set, &set.cells(), 0..n_days, &fast(), 2).unwrap();
        for slot in &m.slots[..per_day - 1] {
            assert_eq!(slot.n_groups(), 2);
            assert!(
                slot.from_to[0][0] > 0.95 && slot.from_to[1][1] > 0.95,
                "{:?}",
                slot.from_to
            );
        }
    }

    #[test]
    fn all_zero_slot_is_single_group() {
        let n_days = 5;
        let counts = vec![vec![0u32; n_days * 2]; 3];
        let set = series_set(counts, n_days, 720);
        let m = fit_weikl(&set, &set.cells(), 0..4, &fast(), 0).unwrap();
        assert!(m
            .slots
            .iter()
            .all(|s| s.n_groups() == 1 && s.variation[0].iter().all(|v| *v == 0.0)));
        assert_eq!(m.predict_all(4, 1).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn needs_two_training_days() {
        let set = series_set(vec![vec![1; 8]], 4, 360);
        assert!(fit_weikl(&set, &set.cells(), 0..1, &fast(), 0).is_err());
    }
}
