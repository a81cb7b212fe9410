//! Snapshot ingestion: parsing, cleaning, trip inference and utilisation.

mod area;
mod clean;
mod parse;
mod trips;
mod utilisation;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::geometry::LonLat;

pub(crate) use area::polygon_from_geojson as polygon_from_geojson_pub;
pub use area::OperationArea;
pub use clean::clean;
pub use parse::{parse_snapshots, write_snapshots_ndjson, FieldMapping, InputFormat};
pub use trips::{infer_trips, read_trips_csv, write_trips_csv, TripParams, TRIP_CSV_HEADER};
pub use utilisation::{
    cell_utilisation, trips_per_vehicle_day, utilisation_rate, vehicle_utilisation, CellUtilisation,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cleanliness {
    Good,
    Unacceptable,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Combustion,
    Electric,
}

/// One available vehicle observed at one poll instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub vin: String,
    pub timestamp: DateTime<Utc>,
    pub position: LonLat,
    /// Fuel or charge level, percent.
    pub fuel: f64,
    pub interior: Cleanliness,
    pub exterior: Cleanliness,
    pub engine: Engine,
}

/// Counts of records dropped at each stage.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscardReport {
    pub rows_read: usize,
    pub malformed: usize,
    pub out_of_range: usize,
    pub duplicates: usize,
    pub outside_area: usize,
}

impl DiscardReport {
    pub fn total_discarded(&self) -> usize {
        self.malformed + self.out_of_range + self.duplicates + self.outside_area
    }
}

/// Deduplicated snapshots sorted by `(timestamp, vin)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SnapshotSet {
    pub records: Vec<SnapshotRecord>,
    pub source: Option<String>,
    pub report: DiscardReport,
}

impl SnapshotSet {
    /// Builds a set from raw records: keeps the first of any duplicated
    /// `(vin, timestamp)` pair and sorts the rest.
    pub fn from_records(records: Vec<SnapshotRecord>) -> Self {
        let mut set = SnapshotSet {
            records,
            source: None,
            report: DiscardReport::default(),
        };
        set.report.rows_read = set.records.len();
        set.normalize();
        set
    }

    pub(crate) fn normalize(&mut self) {
        let mut seen = std::collections::HashSet::with_capacity(self.records.len());
        let before = self.records.len();
        self.records
            .retain(|r| seen.insert((r.vin.clone(), r.timestamp)));
        self.report.duplicates += before - self.records.len();
        // Stable, so equal keys never reorder.
        self.records.sort_by(|a, b| {
            a.timestamp
                .cmp(&b.timestamp)
                .then_with(|| a.vin.cmp(&b.vin))
        });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct vehicle identifiers, sorted.
    pub fn vins(&self) -> Vec<&str> {
        let set: std::collections::BTreeSet<&str> =
            self.records.iter().map(|r| r.vin.as_str()).collect();
        set.into_iter().collect()
    }

    /// First and last timestamp.
    pub fn time_span(&self) -> Option<(DateTime<Utc>, DateTime<Utc>)> {
        Some((
            self.records.first()?.timestamp,
            self.records.last()?.timestamp,
        ))
    }
}

/// Inferred movement of one vehicle between two parked positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    pub vin: String,
    pub start_time: DateTime<Utc>,
    pub end_time: DateTime<Utc>,
    pub origin: LonLat,
    pub destination: LonLat,
}

impl Trip {
    pub fn duration_min(&self) -> f64 {
        (self.end_time - self.start_time).num_seconds() as f64 / 60.0
    }

    pub fn displacement_m(&self) -> f64 {
        crate::geometry::haversine_m(self.origin, self.destination)
    }
}

/// Trips sorted by `(start_time, vin)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TripSet {
    pub trips: Vec<Trip>,
    pub source: Option<String>,
    /// Short disappearances below the jitter radius, folded into presence.
    pub jitter_merged: usize,
    /// Short disappearances (below `min_gap`) that ended elsewhere.
    pub short_relocations: usize,
}

impl TripSet {
    pub fn new(mut trips: Vec<Trip>) -> Self {
        trips.sort_by(|a, b| {
            a.start_time
                .cmp(&b.start_time)
                .then_with(|| a.vin.cmp(&b.vin))
        });
        TripSet {
            trips,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.trips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trips.is_empty()
    }
}
