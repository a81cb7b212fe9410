use std::collections::BTreeSet;
use std::io::Write;

use chrono::{NaiveDate, Weekday};

use super::EventSeriesSet;
use crate::error::Result;
use crate::grid::{CellId, Grid};

/// Column names of [`FeatureRow::encode`]. Day of week is dummy-coded with
/// Sunday as the reference level.
pub const FEATURE_NAMES: [&str; 9] = [
    "time_of_day",
    "dow_mon",
    "dow_tue",
    "dow_wed",
    "dow_thu",
    "dow_fri",
    "dow_sat",
    "is_weekday",
    "neighbor_avg",
];

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub cell: CellId,
    pub day: usize,
    pub date: NaiveDate,
    pub bin: usize,
    pub day_of_week: Weekday,
    pub is_weekday: bool,
    /// Mean count over the cell's active neighbours at the same day and bin.
    pub neighbor_avg: f64,
    pub target: f64,
}

impl FeatureRow {
    pub fn encode(&self) -> [f64; 9] {
        let mut x = [0.0; 9];
        x[0] = self.bin as f64;
        let dow = self.day_of_week.num_days_from_monday() as usize;
        if dow < 6 {
            x[1 + dow] = 1.0;
        }
        x[7] = if self.is_weekday { 1.0 } else { 0.0 };
        x[8] = self.neighbor_avg;
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub bin_minutes: u32,
    /// Ordered by `(cell, day, bin)`.
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    /// Contiguous row range of one cell.
    pub fn cell_rows(&self, cell: CellId) -> &[FeatureRow] {
        let lo = self.rows.partition_point(|r| r.cell < cell);
        let hi = self.rows.partition_point(|r| r.cell <= cell);
        &self.rows[lo..hi]
    }

    pub fn cells(&self) -> Vec<CellId> {
        let mut cells: Vec<CellId> = self.rows.iter().map(|r| r.cell).collect();
        cells.dedup();
        cells
    }
}

/// One row per `(cell, day, bin)` for each eligible cell. The neighbour
/// average runs over all active cells within `hops` queen moves; a cell
/// without active neighbours gets 0.
pub fn build_feature_table(
    series: &EventSeriesSet,
    grid: &Grid,
    eligible: &BTreeSet<CellId>,
    hops: u32,
) -> Result<FeatureTable> {
    let per_day = series.bins_per_day();
    let n_days = series.calendar.len();
    let mut rows = Vec::new();
    for s in series.series.iter().filter(|s| eligible.contains(&s.cell)) {
        let neighbours: Vec<_> = grid
            .neighbors(s.cell, hops)?
            .into_iter()
            .filter_map(|c| series.get(c))
            .collect();
        for day in 0..n_days {
            for bin in 0..per_day {
                let neighbor_avg = if neighbours.is_empty() {
                    0.0
                } else {
                    neighbours
                        .iter()
                        .map(|n| n.get(day, bin) as f64)
                        .sum::<f64>()
                        / neighbours.len() as f64
                };
                rows.push(FeatureRow {
                    cell: s.cell,
                    day,
                    date: series.calendar.days[day],
                    bin,
                    day_of_week: series.calendar.weekday(day),
                    is_weekday: series.calendar.is_weekday(day),
                    neighbor_avg,
                    target: s.get(day, bin) as f64,
                });
            }
        }
    }
    Ok(FeatureTable {
        bin_minutes: series.bin_minutes,
        rows,
    })
}

pub fn write_feature_csv<W: Write>(w: W, table: &FeatureTable) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "row",
        "col",
        "day",
        "date",
        "bin",
        "time_of_day",
        "day_of_week",
        "is_weekday",
        "neighbor_avg",
        "target",
    ])?;
    for r in &table.rows {
        let minute = r.bin as u32 * table.bin_minutes;
        wtr.write_record([
            r.cell.row.to_string(),
            r.cell.col.to_string(),
            r.day.to_string(),
            r.date.to_string(),
            r.bin.to_string(),
            format!("{:02}:{:02}", minute / 60, minute % 60),
            r.day_of_week.to_string(),
            r.is_weekday.to_string(),
            r.neighbor_avg.to_string(),
            r.target.to_string(),
        ])?;
    }
    wtr.flush()
        .map_err(|e| crate::Error::io("<feature csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;

    use super::*;
    use crate::features::{Calendar, EventKind, EventSeries};
    use crate::geometry::LonLat;
    use crate::ingest::OperationArea;

    fn grid(km: f64) -> Grid {
        let area = OperationArea::rectangle_km("t", LonLat::new(9.19, 45.46), km, km).unwrap();
        Grid::build(&area, 500.0).unwrap()
    }

    fn constant_set(g: &Grid, value: u32, days: usize) -> EventSeriesSet {
        let cal = Calendar::new(
            chrono_tz::UTC,
            NaiveDate::from_ymd_opt(2017, 3, 5).unwrap(),
            days,
        );
        let series = g
            .active
            .iter()
            .map(|&c| {
                let mut s = EventSeries::zeros(c, EventKind::Pickup, 60, days).unwrap();
                s.counts.iter_mut().for_each(|v| *v = value);
                s
            })
            .collect();
        EventSeriesSet {
            kind: EventKind::Pickup,
            bin_minutes: 60,
            calendar: cal,
            series,
            unassigned: 0,
        }
    }

    #[test]
    fn interior_cell_neighbour_average() {
        let g = grid(3.0);
        let set = constant_set(&g, 2, 2);
        let centre = CellId::new(3, 3);
        let eligible = BTreeSet::from([centre]);
        let table = build_feature_table(&set, &g, &eligible, 2).unwrap();
        assert_eq!(table.rows.len(), 2 * 24);
        assert!(table.rows.iter().all(|r| r.neighbor_avg == 2.0));
        // 2017-03-05 is a Sunday: reference level, all dummies zero.
        assert_eq!(table.rows[0].encode()[1..8], [0.0; 7]);
        assert_eq!(table.rows[24].encode()[1], 1.0);
        assert_eq!(table.rows[24].encode()[7], 1.0);
    }

    #[test]
    fn isolated_cell_has_zero_neighbour_average() {
        let mut g = grid(3.0);
        let lonely = CellId::new(0, 0);
        g.active = BTreeSet::from([lonely]);
        let set = constant_set(&g, 5, 1);
        let table = build_feature_table(&set, &g, &BTreeSet::from([lonely]), 2).unwrap();
        assert!(table
            .rows
            .iter()
            .all(|r| r.neighbor_avg == 0.0 && r.target == 5.0));
    }
}
