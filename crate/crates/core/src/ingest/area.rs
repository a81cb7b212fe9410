use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::{ring_area, LocalProjection, LonLat, Polygon};

/// The polygon inside which vehicles may be parked.
#[derive(Debug, Clone, PartialEq)]
pub struct OperationArea {
    pub city: String,
    pub polygon: Polygon,
    pub area_km2: f64,
    /// Equirectangular projection anchored at the bounding-box south-west
    /// corner, scaled at the bounding-box centre latitude.
    pub projection: LocalProjection,
}

impl OperationArea {
    pub fn new(city: impl Into<String>, polygon: Polygon) -> Result<Self> {
        if !polygon.is_simple() {
            return Err(Error::Geometry(
                "operation area polygon is not simple".into(),
            ));
        }
        let (min, _) = polygon.bbox();
        let projection = LocalProjection::new(min, polygon.bbox_center().lat);
        let area_km2 = ring_area(&polygon.project(&projection)) / 1e6;
        if !(area_km2 > 0.0) {
            return Err(Error::Geometry("operation area has zero area".into()));
        }
        Ok(OperationArea {
            city: city.into(),
            polygon,
            area_km2,
            projection,
        })
    }

    /// Rectangle of `width_km` x `height_km` centred on `center`.
    pub fn rectangle_km(
        city: impl Into<String>,
        center: LonLat,
        width_km: f64,
        height_km: f64,
    ) -> Result<Self> {
        let proj = LocalProjection::new(center, center.lat);
        let half_w = width_km * 500.0;
        let half_h = height_km * 500.0;
        let min = proj.to_lonlat(crate::geometry::Xy::new(-half_w, -half_h));
        let max = proj.to_lonlat(crate::geometry::Xy::new(half_w, half_h));
        OperationArea::new(city, Polygon::rectangle(min, max)?)
    }

    pub fn contains(&self, p: LonLat) -> bool {
        self.polygon.contains(p)
    }

    /// Parses a GeoJSON `Polygon` geometry, `Feature` or the first polygon
    /// feature of a `FeatureCollection`. Holes are ignored.
    pub fn from_geojson(value: &Value, default_city: &str) -> Result<Self> {
        let (geometry, props) = match value.get("type").and_then(Value::as_str) {
            Some("FeatureCollection") => {
                let feature = value
                    .get("features")
                    .and_then(Value::as_array)
                    .and_then(|f| {
                        f.iter().find(|f| {
                            f.pointer("/geometry/type").and_then(Value::as_str) == Some("Polygon")
                        })
                    })
                    .ok_or_else(|| Error::Geometry("no polygon feature in collection".into()))?;
                (&feature["geometry"], feature.get("properties"))
            }
            Some("Feature") => (&value["geometry"], value.get("properties")),
            Some("Polygon") => (value, None),
            other => {
                return Err(Error::Geometry(format!(
                    "unsupported GeoJSON type for operation area: {other:?}"
                )))
            }
        };
        let polygon = polygon_from_geojson(geometry)?;
        let city = props
            .and_then(|p| p.get("city").or_else(|| p.get("name")))
            .and_then(Value::as_str)
            .unwrap_or(default_city);
        OperationArea::new(city, polygon)
    }

    pub fn load(path: &Path, default_city: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value = serde_json::from_str(&text)?;
        OperationArea::from_geojson(&value, default_city)
    }

    pub fn to_geojson(&self) -> Value {
        let mut ring: Vec<Value> = self
            .polygon
            .ring
            .iter()
            .map(|p| serde_json::json!([p.lon, p.lat]))
            .collect();
        ring.push(ring[0].clone());
        serde_json::json!({
            "type": "Feature",
            "properties": { "city": self.city },
            "geometry": { "type": "Polygon", "coordinates": [ring] }
        })
    }
}

pub(crate) fn polygon_from_geojson(geometry: &Value) -> Result<Polygon> {
    if geometry.get("type").and_then(Value::as_str) != Some("Polygon") {
        return Err(Error::Geometry("expected a Polygon geometry".into()));
    }
    let outer = geometry
        .pointer("/coordinates/0")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Geometry("polygon without coordinates".into()))?;
    let ring = outer
        .iter()
        .map(|c| {
            let lon = c.get(0).and_then(Value::as_f64);
            let lat = c.get(1).and_then(Value::as_f64);
            match (lon, lat) {
                (Some(lon), Some(lat)) => Ok(LonLat::new(lon, lat)),
                _ => Err(Error::Geometry(format!("bad coordinate {c}"))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Polygon::new(ring)
}
