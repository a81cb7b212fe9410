//! Ranking cells by how many distinct vehicles they see within a window of
//! W days, to site cleaning and maintenance facilities.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::features::Calendar;
use crate::grid::{CellId, Grid};
use crate::ingest::{SnapshotSet, TripSet};

/// Vehicles observed in each cell on each day, as indices into `vins`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Presence {
    pub vins: Vec<String>,
    pub n_days: usize,
    pub cells: BTreeMap<CellId, Vec<BTreeSet<u32>>>,
}

impl Presence {
    pub(crate) fn empty(vins: Vec<String>, n_days: usize) -> Self {
        Presence {
            vins,
            n_days,
            cells: BTreeMap::new(),
        }
    }

    pub(crate) fn mark(&mut self, cell: CellId, day: usize, vin: u32) {
        let n = self.n_days;
        self.cells
            .entry(cell)
            .or_insert_with(|| vec![BTreeSet::new(); n])[day]
            .insert(vin);
    }

    pub fn fleet_size(&self) -> usize {
        self.vins.len()
    }
}

fn vin_index<'a>(vins: impl Iterator<Item = &'a str>) -> (Vec<String>, HashMap<String, u32>) {
    let sorted: BTreeSet<&str> = vins.collect();
    let list: Vec<String> = sorted.into_iter().map(str::to_string).collect();
    let idx = list
        .iter()
        .enumerate()
        .map(|(i, v)| (v.clone(), i as u32))
        .collect();
    (list, idx)
}

/// Presence from parked vehicles in snapshots.
pub fn presence_from_snapshots(s: &SnapshotSet, grid: &Grid, calendar: &Calendar) -> Presence {
    let (vins, idx) = vin_index(s.records.iter().map(|r| r.vin.as_str()));
    let mut p = Presence::empty(vins, calendar.len());
    for r in &s.records {
        if let (Some(c), Some((day, _))) = (
            grid.locate_active(r.position),
            calendar.locate(&r.timestamp),
        ) {
            p.mark(c, day, idx[&r.vin]);
        }
    }
    p
}

/// Presence from trip origins and destinations.
pub fn presence_from_trips(trips: &TripSet, grid: &Grid, calendar: &Calendar) -> Presence {
    let (vins, idx) = vin_index(trips.trips.iter().map(|t| t.vin.as_str()));
    let mut p = Presence::empty(vins, calendar.len());
    for t in &trips.trips {
        for (pos, time) in [(t.origin, t.start_time), (t.destination, t.end_time)] {
            if let (Some(c), Some((day, _))) = (grid.locate_active(pos), calendar.locate(&time)) {
                p.mark(c, day, idx[&t.vin]);
            }
        }
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowMode {
    /// Best of all W-day windows.
    #[default]
    Sliding,
    /// Only the first W days.
    First,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoverageRow {
    pub cell: CellId,
    pub distinct_vehicles: usize,
    pub fleet_fraction: f64,
    /// 1-based rank, descending by count, ties by cell.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageTable {
    pub window_days: usize,
    pub fleet_size: usize,
    /// Sorted by rank.
    pub rows: Vec<CoverageRow>,
}

fn window_max(days: &[BTreeSet<u32>], w: usize, mode: WindowMode) -> usize {
    let mut count: HashMap<u32, u32> = HashMap::new();
    let mut best = 0;
    for (d, vins) in days.iter().enumerate() {
        for &v in vins {
            *count.entry(v).or_default() += 1;
        }
        if d >= w {
            for v in &days[d - w] {
                let e = count.get_mut(v).unwrap();
                *e -= 1;
                if *e == 0 {
                    count.remove(v);
                }
            }
        }
        if d + 1 >= w {
            best = best.max(count.len());
            if mode == WindowMode::First {
                break;
            }
        }
    }
    best
}

/// Distinct vehicles per cell within the best window of `window_days`.
pub fn coverage(p: &Presence, window_days: usize, mode: WindowMode) -> Result<CoverageTable> {
    if window_days == 0 || window_days > p.n_days {
        return Err(Error::invalid(format!(
            "window of {window_days} days does not fit {} observed days",
            p.n_days
        )));
    }
    if p.fleet_size() == 0 {
        return Err(Error::InsufficientData("no vehicles observed".into()));
    }
    let fleet = p.fleet_size();
    let cells: Vec<(&CellId, &Vec<BTreeSet<u32>>)> = p.cells.iter().collect();
    let mut rows: Vec<CoverageRow> = cells
        .par_iter()
        .map(|(c, days)| {
            let n = window_max(days, window_days, mode);
            CoverageRow {
                cell: **c,
                distinct_vehicles: n,
                fleet_fraction: n as f64 / fleet as f64,
                rank: 0,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        b.distinct_vehicles
            .cmp(&a.distinct_vehicles)
            .then(a.cell.cmp(&b.cell))
    });
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(CoverageTable {
        window_days,
        fleet_size: fleet,
        rows,
    })
}

impl CoverageTable {
    /// Coverage of one cell; zero for cells never visited.
    pub fn fraction(&self, cell: CellId) -> f64 {
        self.rows
            .iter()
            .find(|r| r.cell == cell)
            .map_or(0.0, |r| r.fleet_fraction)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["row", "col", "distinct_vehicles", "fleet_fraction", "rank"])?;
        for r in &self.rows {
            wtr.write_record([
                r.cell.row.to_string(),
                r.cell.col.to_string(),
                r.distinct_vehicles.to_string(),
                format!("{:.6}", r.fleet_fraction),
                r.rank.to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))
    }
}

/// Cells reaching `threshold`, at most `top_k`, in rank order.
pub fn select_sites(table: &CoverageTable, threshold: f64, top_k: usize) -> Vec<CoverageRow> {
    table
        .rows
        .iter()
        .filter(|r| r.fleet_fraction >= threshold)
        .take(top_k)
        .copied()
        .collect()
}

pub fn sites_geojson(grid: &Grid, sites: &[CoverageRow]) -> Value {
    let features: Vec<Value> = sites
        .iter()
        .map(|r| {
            let mut props = serde_json::Map::new();
            props.insert("rank".into(), json!(r.rank));
            props.insert("distinct_vehicles".into(), json!(r.distinct_vehicles));
            props.insert("fleet_fraction".into(), json!(r.fleet_fraction));
            grid.cell_feature(r.cell, props)
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}
