use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::TripSet;
use crate::error::{Error, Result};
use crate::grid::{CellId, Grid};

/// Fleet utilisation: trips per vehicle per day.
pub fn utilisation_rate(trips: &TripSet, fleet_size: usize, observation_days: f64) -> Result<f64> {
    trips_per_vehicle_day(trips.len(), fleet_size, observation_days)
}

/// `trips / fleet_size / observation_days` from aggregate counts.
pub fn trips_per_vehicle_day(
    trips: usize,
    fleet_size: usize,
    observation_days: f64,
) -> Result<f64> {
    if fleet_size == 0 {
        return Err(Error::invalid("fleet size must be positive"));
    }
    if !(observation_days > 0.0) {
        return Err(Error::invalid("observation period must be positive"));
    }
    Ok(trips as f64 / fleet_size as f64 / observation_days)
}

/// Per-vehicle daily trip rate, keyed by vin.
pub fn vehicle_utilisation(trips: &TripSet, observation_days: f64) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for t in &trips.trips {
        *counts.entry(t.vin.clone()).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(vin, n)| (vin, n as f64 / observation_days))
        .collect()
}

/// Utilisation of trips starting in one cell, under both denominators.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellUtilisation {
    pub cell: CellId,
    pub trips: usize,
    /// Distinct vehicles that started a trip in the cell.
    pub vehicles_seen: usize,
    /// trips / fleet size / days
    pub per_fleet_vehicle: f64,
    /// trips / vehicles seen in the cell / days
    pub per_seen_vehicle: f64,
}

/// Utilisation keyed by trip origin cell. Trips starting outside active
/// cells are ignored.
pub fn cell_utilisation(
    trips: &TripSet,
    grid: &Grid,
    fleet_size: usize,
    observation_days: f64,
) -> Vec<CellUtilisation> {
    let mut per_cell: BTreeMap<CellId, (usize, BTreeSet<&str>)> = BTreeMap::new();
    for t in &trips.trips {
        if let Some(c) = grid.locate_active(t.origin) {
            let e = per_cell.entry(c).or_default();
            e.0 += 1;
            e.1.insert(t.vin.as_str());
        }
    }
    per_cell
        .into_iter()
        .map(|(cell, (n, vins))| CellUtilisation {
            cell,
            trips: n,
            vehicles_seen: vins.len(),
            per_fleet_vehicle: n as f64 / fleet_size as f64 / observation_days,
            per_seen_vehicle: n as f64 / vins.len() as f64 / observation_days,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_trip_set_rate_is_zero() {
        assert_eq!(
            utilisation_rate(&TripSet::default(), 10, 45.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn zero_fleet_is_rejected() {
        assert!(trips_per_vehicle_day(5, 0, 45.0).is_err());
        assert!(trips_per_vehicle_day(5, 3, 0.0).is_err());
    }
}
