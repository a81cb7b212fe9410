use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{bins_per_day, Calendar};
use crate::error::Result;
use crate::grid::{CellId, Grid};
use crate::ingest::TripSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Pickup,
    Dropoff,
}

impl std::fmt::Display for EventKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EventKind::Pickup => "pickup",
            EventKind::Dropoff => "dropoff",
        })
    }
}

/// Per-cell event counts, day-major: `counts[day * bins_per_day + bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSeries {
    pub cell: CellId,
    pub kind: EventKind,
    pub bin_minutes: u32,
    pub bins_per_day: usize,
    pub counts: Vec<u32>,
}

impl EventSeries {
    pub fn zeros(cell: CellId, kind: EventKind, bin_minutes: u32, n_days: usize) -> Result<Self> {
        let bins_per_day = bins_per_day(bin_minutes)?;
        Ok(EventSeries {
            cell,
            kind,
            bin_minutes,
            bins_per_day,
            counts: vec![0; bins_per_day * n_days],
        })
    }

    pub fn n_days(&self) -> usize {
        self.counts.len() / self.bins_per_day
    }

    pub fn get(&self, day: usize, bin: usize) -> u32 {
        self.counts[day * self.bins_per_day + bin]
    }

    pub fn day(&self, day: usize) -> &[u32] {
        &self.counts[day * self.bins_per_day..(day + 1) * self.bins_per_day]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

/// Event series for every active cell of a grid, sharing one calendar.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSeriesSet {
    pub kind: EventKind,
    pub bin_minutes: u32,
    pub calendar: Calendar,
    /// Sorted by cell.
    pub series: Vec<EventSeries>,
    /// Events whose location or time fell outside the grid or calendar.
    pub unassigned: usize,
}

impl EventSeriesSet {
    pub fn bins_per_day(&self) -> usize {
        (1440 / self.bin_minutes) as usize
    }

    pub fn get(&self, cell: CellId) -> Option<&EventSeries> {
        self.series
            .binary_search_by(|s| s.cell.cmp(&cell))
            .ok()
            .map(|i| &self.series[i])
    }

    pub fn cells(&self) -> Vec<CellId> {
        self.series.iter().map(|s| s.cell).collect()
    }

    pub fn total(&self) -> u64 {
        self.series.iter().map(EventSeries::total).sum()
    }
}

/// Counts pickups (by trip start) or drop-offs (by trip end) per active
/// cell and local time bin. Every active cell gets a series, zeros included.
pub fn bin_events(
    trips: &TripSet,
    grid: &Grid,
    calendar: &Calendar,
    bin_minutes: u32,
    kind: EventKind,
) -> Result<EventSeriesSet> {
    let per_day = bins_per_day(bin_minutes)?;
    let n_days = calendar.len();
    let mut by_cell: BTreeMap<CellId, EventSeries> = grid
        .active
        .iter()
        .map(|&c| EventSeries::zeros(c, kind, bin_minutes, n_days).map(|s| (c, s)))
        .collect::<Result<_>>()?;
    let mut unassigned = 0;
    for t in &trips.trips {
        let (when, where_) = match kind {
            EventKind::Pickup => (&t.start_time, t.origin),
            EventKind::Dropoff => (&t.end_time, t.destination),
        };
        let slot = calendar.locate(when);
        let cell = grid.locate_active(where_);
        match (slot, cell.and_then(|c| by_cell.get_mut(&c))) {
            (Some((day, minute)), Some(series)) => {
                let bin = (minute / bin_minutes) as usize;
                series.counts[day * per_day + bin] += 1;
            }
            _ => unassigned += 1,
        }
    }
    if unassigned > 0 {
        log::warn!("{unassigned} {kind} events fell outside the grid or calendar");
    }
    Ok(EventSeriesSet {
        kind,
        bin_minutes,
        calendar: calendar.clone(),
        series: by_cell.into_values().collect(),
        unassigned,
    })
}

/// Cells with more than `min_events` pickups plus drop-offs in total.
pub fn busy_cells(
    pickups: &EventSeriesSet,
    dropoffs: &EventSeriesSet,
    min_events: u64,
) -> BTreeSet<CellId> {
    let mut totals: BTreeMap<CellId, u64> = BTreeMap::new();
    for s in pickups.series.iter().chain(&dropoffs.series) {
        *totals.entry(s.cell).or_default() += s.total();
    }
    totals
        .into_iter()
        .filter(|&(_, n)| n > min_events)
        .map(|(c, _)| c)
        .collect()
}

#[cfg(test)]
mod tests {
    use chrono::{NaiveDate, TimeZone, Utc};

    use super::*;
    use crate::geometry::LonLat;
    use crate::ingest::{OperationArea, Trip};

    fn setup() -> (Grid, Calendar) {
        let area = OperationArea::rectangle_km("t", LonLat::new(9.19, 45.46), 2.0, 2.0).unwrap();
        let grid = Grid::build(&area, 500.0).unwrap();
        let cal = Calendar::new(
            chrono_tz::UTC,
            NaiveDate::from_ymd_opt(2017, 3, 1).unwrap(),
            2,
        );
        (grid, cal)
    }

    #[test]
    fn trip_at_ten_past_ten_lands_in_bin_ten() {
        let (grid, cal) = setup();
        let c = grid.cell_center(CellId::new(1, 2));
        let trip = Trip {
            vin: "V".into(),
            start_time: Utc.with_ymd_and_hms(2017, 3, 2, 10, 7, 0).unwrap(),
            end_time: Utc.with_ymd_and_hms(2017, 3, 2, 10, 40, 0).unwrap(),
            origin: c,
            destination: grid.cell_center(CellId::new(0, 0)),
        };
        let set = TripSet::new(vec![trip]);
        let pick = bin_events(&set, &grid, &cal, 60, EventKind::Pickup).unwrap();
        assert_eq!(pick.series.len(), 16);
        let s = pick.get(CellId::new(1, 2)).unwrap();
        assert_eq!(s.get(1, 10), 1);
        assert_eq!(pick.total(), 1);
        let drop = bin_events(&set, &grid, &cal, 60, EventKind::Dropoff).unwrap();
        assert_eq!(drop.get(CellId::new(0, 0)).unwrap().get(1, 10), 1);
    }

    #[test]
    fn bin_length_not_dividing_day_is_error() {
        let (grid, cal) = setup();
        assert!(bin_events(&TripSet::default(), &grid, &cal, 7, EventKind::Pickup).is_err());
    }
}
