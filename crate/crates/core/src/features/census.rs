use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::{intersection_area, point_in_ring, ring_area, Polygon};
use crate::ingest::{OperationArea, TripSet};

/// Census units covering less than this share of their own area inside the
/// operation area are dropped.
pub const MIN_OVERLAP: f64 = 0.20;

/// Sample skewness above which a predictor is log-transformed.
pub const SKEW_THRESHOLD: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CensusInput {
    pub id: String,
    pub polygon: Polygon,
    /// Raw indicator values; `None` marks a missing value.
    pub indicators: BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CensusUnit {
    pub id: String,
    /// Share of the unit's area inside the operation area.
    pub overlap: f64,
    /// Indicators scaled by `overlap`.
    pub indicators: BTreeMap<String, Option<f64>>,
    /// Trips starting inside the unit.
    pub pickups: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CensusTable {
    pub units: Vec<CensusUnit>,
    pub discarded: Vec<String>,
    /// Indicators whose sample skewness exceeds [`SKEW_THRESHOLD`].
    pub skewed: BTreeSet<String>,
}

/// Reads a GeoJSON FeatureCollection of census polygons. Numeric properties
/// become indicators; `id` (or `name`) identifies the unit.
pub fn read_census_geojson(v: &Value) -> Result<Vec<CensusInput>> {
    let features = v
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::invalid("census GeoJSON must be a FeatureCollection"))?;
    features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let props = f.get("properties").and_then(Value::as_object);
            let id = props
                .and_then(|p| p.get("id").or_else(|| p.get("name")))
                .map(|v| match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .unwrap_or_else(|| i.to_string());
            let polygon = crate::ingest::polygon_from_geojson_pub(&f["geometry"])?;
            let indicators = props
                .into_iter()
                .flatten()
                .filter(|(k, _)| k.as_str() != "id" && k.as_str() != "name")
                .filter_map(|(k, v)| match v {
                    Value::Number(n) => Some((k.clone(), n.as_f64())),
                    Value::Null => Some((k.clone(), None)),
                    _ => None,
                })
                .collect();
            Ok(CensusInput {
                id,
                polygon,
                indicators,
            })
        })
        .collect()
}

/// Moment estimator of sample skewness; 0 for fewer than three values.
pub fn skewness(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if n < 3.0 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    if m2 <= 0.0 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}

/// Intersects census units with the operation area, rescales indicators by
/// the overlap share, drops units under [`MIN_OVERLAP`] and attaches the
/// number of trip origins inside each retained unit. A trip origin on a
/// shared boundary counts for the first unit in input order.
pub fn census_overlay(
    inputs: &[CensusInput],
    area: &OperationArea,
    trips: &TripSet,
) -> Result<CensusTable> {
    let proj = &area.projection;
    let area_ring = area.polygon.project(proj);
    let mut units = Vec::new();
    let mut discarded = Vec::new();
    let mut rings = Vec::new();
    for input in inputs {
        let ring = input.polygon.project(proj);
        let own = ring_area(&ring);
        if own <= 0.0 {
            return Err(Error::Geometry(format!(
                "census unit {} has zero area",
                input.id
            )));
        }
        let overlap = (intersection_area(&ring, &area_ring) / own).clamp(0.0, 1.0);
        if overlap < MIN_OVERLAP {
            discarded.push(input.id.clone());
            continue;
        }
        units.push(CensusUnit {
            id: input.id.clone(),
            overlap,
            indicators: input
                .indicators
                .iter()
                .map(|(k, v)| (k.clone(), v.map(|x| x * overlap)))
                .collect(),
            pickups: 0,
        });
        rings.push(ring);
    }
    if units.is_empty() {
        return Err(Error::InsufficientData(format!(
            "none of {} census units overlaps the {} operation area by at least {:.0}%",
            inputs.len(),
            area.city,
            MIN_OVERLAP * 100.0
        )));
    }
    for t in &trips.trips {
        if !area.contains(t.origin) {
            continue;
        }
        let p = proj.to_xy(t.origin);
        if let Some(i) = rings.iter().position(|r| point_in_ring(r, p)) {
            units[i].pickups += 1;
        }
    }

    let names: BTreeSet<&String> = units.iter().flat_map(|u| u.indicators.keys()).collect();
    let skewed = names
        .into_iter()
        .filter(|name| {
            let xs: Vec<f64> = units
                .iter()
                .filter_map(|u| u.indicators.get(*name).copied().flatten())
                .collect();
            skewness(&xs) > SKEW_THRESHOLD
        })
        .cloned()
        .collect();
    Ok(CensusTable {
        units,
        discarded,
        skewed,
    })
}
