use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{DateTime, SecondsFormat, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{SnapshotRecord, SnapshotSet, Trip, TripSet};
use crate::error::{Error, Result};
use crate::geometry::{haversine_m, LonLat};

pub const TRIP_CSV_HEADER: &str =
    "vin,start_time,end_time,origin_lon,origin_lat,dest_lon,dest_lat,duration_min,displacement_m";

/// Thresholds separating real trips from polling dropouts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TripParams {
    /// Minimum unavailability, in minutes, for a disappearance to be a trip.
    pub min_gap_min: f64,
    /// Short disappearances that reappear closer than this are GPS jitter.
    pub jitter_radius_m: f64,
    /// Nominal poll interval of the feed, in minutes.
    pub poll_interval_min: f64,
}

impl Default for TripParams {
    fn default() -> Self {
        TripParams {
            min_gap_min: 10.0,
            jitter_radius_m: 30.0,
            poll_interval_min: 1.0,
        }
    }
}

enum Gap {
    Trip,
    Jitter,
    ShortRelocation,
}

fn classify(prev: &SnapshotRecord, next: &SnapshotRecord, p: &TripParams) -> Option<Gap> {
    let dt_min = (next.timestamp - prev.timestamp).num_seconds() as f64 / 60.0;
    if dt_min >= p.min_gap_min {
        return Some(Gap::Trip);
    }
    // Consecutive polls: the vehicle never went missing.
    if dt_min <= p.poll_interval_min * 1.5 {
        return None;
    }
    if haversine_m(prev.position, next.position) < p.jitter_radius_m {
        Some(Gap::Jitter)
    } else {
        Some(Gap::ShortRelocation)
    }
}

/// Turns per-vehicle disappearances into trips.
///
/// Each gap between consecutive sightings of a vehicle that lasts at least
/// `min_gap_min` becomes one trip from the last sighting to the next one.
/// Shorter gaps never produce trips; those ending within `jitter_radius_m`
/// are counted as jitter, the rest as short relocations.
pub fn infer_trips(s: &SnapshotSet, params: &TripParams) -> TripSet {
    let mut by_vin: BTreeMap<&str, Vec<&SnapshotRecord>> = BTreeMap::new();
    for r in &s.records {
        by_vin.entry(r.vin.as_str()).or_default().push(r);
    }
    let per_vin: Vec<(Vec<Trip>, usize, usize)> = by_vin
        .into_par_iter()
        .map(|(_, mut obs)| {
            obs.sort_by_key(|r| r.timestamp);
            let mut trips = Vec::new();
            let (mut jitter, mut short) = (0, 0);
            for w in obs.windows(2) {
                match classify(w[0], w[1], params) {
                    Some(Gap::Trip) => trips.push(Trip {
                        vin: w[0].vin.clone(),
                        start_time: w[0].timestamp,
                        end_time: w[1].timestamp,
                        origin: w[0].position,
                        destination: w[1].position,
                    }),
                    Some(Gap::Jitter) => jitter += 1,
                    Some(Gap::ShortRelocation) => short += 1,
                    None => {}
                }
            }
            (trips, jitter, short)
        })
        .collect();

    let mut all = Vec::new();
    let (mut jitter, mut short) = (0, 0);
    for (t, j, sr) in per_vin {
        all.extend(t);
        jitter += j;
        short += sr;
    }
    let mut set = TripSet::new(all);
    set.source = s.source.clone();
    set.jitter_merged = jitter;
    set.short_relocations = short;
    set
}

fn fmt_time(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn write_trips_csv<W: Write>(w: W, trips: &TripSet) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(TRIP_CSV_HEADER.split(','))?;
    for t in &trips.trips {
        wtr.write_record([
            t.vin.clone(),
            fmt_time(&t.start_time),
            fmt_time(&t.end_time),
            t.origin.lon.to_string(),
            t.origin.lat.to_string(),
            t.destination.lon.to_string(),
            t.destination.lat.to_string(),
            format!("{}", t.duration_min()),
            format!("{:.2}", t.displacement_m()),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<trips csv>", e))?;
    Ok(())
}

pub fn read_trips_csv<R: Read>(r: R) -> Result<TripSet> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut trips = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = |what: &str| Error::invalid(format!("trip row {}: bad {what}", i + 2));
        let time = |k: usize| {
            row.get(k)
                .and_then(|s| DateTime::parse_from_rfc3339(s).ok())
                .map(|t| t.with_timezone(&Utc))
                .ok_or_else(|| bad("timestamp"))
        };
        let num = |k: usize| {
            row.get(k)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| bad("coordinate"))
        };
        trips.push(Trip {
            vin: row.get(0).ok_or_else(|| bad("vin"))?.to_owned(),
            start_time: time(1)?,
            end_time: time(2)?,
            origin: LonLat::new(num(3)?, num(4)?),
            destination: LonLat::new(num(5)?, num(6)?),
        });
    }
    Ok(TripSet::new(trips))
}
