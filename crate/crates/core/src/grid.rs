//! Square tessellation of an operation area.
//!
//! The grid is anchored at the south-west corner of the area's bounding box
//! and uses the area's local equirectangular projection. A cell is active
//! when its intersection with the area polygon has positive area.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geometry::{clip_ring_to_rect, ring_area, LocalProjection, LonLat, Xy};
use crate::ingest::OperationArea;

pub const DEFAULT_CELL_SIDE_M: f64 = 500.0;

/// Grid cell index; row grows northwards, col eastwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellId {
    pub row: u32,
    pub col: u32,
}

impl CellId {
    pub const fn new(row: u32, col: u32) -> Self {
        CellId { row, col }
    }

    pub fn chebyshev(&self, other: &CellId) -> u32 {
        self.row
            .abs_diff(other.row)
            .max(self.col.abs_diff(other.col))
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    /// South-west corner of the covered box.
    pub origin: LonLat,
    pub cell_side_m: f64,
    pub n_rows: u32,
    pub n_cols: u32,
    pub active: BTreeSet<CellId>,
    pub projection: LocalProjection,
}

impl Grid {
    pub fn build(area: &OperationArea, cell_side_m: f64) -> Result<Grid> {
        if !(cell_side_m > 0.0) || !cell_side_m.is_finite() {
            return Err(Error::invalid(format!(
                "cell side must be positive, got {cell_side_m}"
            )));
        }
        let projection = area.projection;
        let ring = area.polygon.project(&projection);
        if ring_area(&ring) <= 0.0 {
            return Err(Error::Geometry("degenerate operation area".into()));
        }
        let (min, max) = area.polygon.bbox();
        let extent = projection.to_xy(max);
        let origin_xy = projection.to_xy(min);
        let count = |span: f64| ((span / cell_side_m) - 1e-9).ceil().max(1.0) as u32;
        let n_cols = count(extent.x - origin_xy.x);
        let n_rows = count(extent.y - origin_xy.y);

        let min_area = 1e-9 * cell_side_m * cell_side_m;
        let mut active = BTreeSet::new();
        for row in 0..n_rows {
            for col in 0..n_cols {
                let lo = Xy::new(
                    origin_xy.x + col as f64 * cell_side_m,
                    origin_xy.y + row as f64 * cell_side_m,
                );
                let hi = Xy::new(lo.x + cell_side_m, lo.y + cell_side_m);
                if ring_area(&clip_ring_to_rect(&ring, lo, hi)) > min_area {
                    active.insert(CellId::new(row, col));
                }
            }
        }
        Ok(Grid {
            origin: min,
            cell_side_m,
            n_rows,
            n_cols,
            active,
            projection,
        })
    }

    fn offset(&self, p: LonLat) -> Xy {
        let a = self.projection.to_xy(p);
        let o = self.projection.to_xy(self.origin);
        Xy::new(a.x - o.x, a.y - o.y)
    }

    /// Cell whose square contains the point. Points on a shared edge go to
    /// the cell with the larger index; points on the outer north or east
    /// edge go to the last row or column.
    pub fn locate(&self, p: LonLat) -> Option<CellId> {
        let xy = self.offset(p);
        let (w, h) = (
            self.n_cols as f64 * self.cell_side_m,
            self.n_rows as f64 * self.cell_side_m,
        );
        if !(xy.x >= 0.0 && xy.y >= 0.0 && xy.x <= w && xy.y <= h) {
            return None;
        }
        // Snap within a nanometre-scale tolerance so projection round-off on
        // a shared edge still resolves to the larger index.
        let idx = |v: f64| (v / self.cell_side_m + 1e-9).floor() as u32;
        let col = idx(xy.x).min(self.n_cols - 1);
        let row = idx(xy.y).min(self.n_rows - 1);
        Some(CellId::new(row, col))
    }

    /// Like [`Grid::locate`] but only returns active cells.
    pub fn locate_active(&self, p: LonLat) -> Option<CellId> {
        self.locate(p).filter(|c| self.active.contains(c))
    }

    pub fn is_active(&self, c: CellId) -> bool {
        self.active.contains(&c)
    }

    /// Active cells within Chebyshev distance `hops` of `c` (queen moves),
    /// excluding `c`, in `(row, col)` order.
    pub fn neighbors(&self, c: CellId, hops: u32) -> Result<Vec<CellId>> {
        if !self.is_active(c) {
            return Err(Error::invalid(format!("cell {c} is not active")));
        }
        let r0 = c.row.saturating_sub(hops);
        let r1 = (c.row + hops).min(self.n_rows - 1);
        let c0 = c.col.saturating_sub(hops);
        let c1 = (c.col + hops).min(self.n_cols - 1);
        let mut out = Vec::new();
        for row in r0..=r1 {
            for col in c0..=c1 {
                let n = CellId::new(row, col);
                if n != c && self.active.contains(&n) {
                    out.push(n);
                }
            }
        }
        Ok(out)
    }

    /// Corners of a cell as a closed lon/lat ring, counter-clockwise from
    /// the south-west corner.
    pub fn cell_ring(&self, c: CellId) -> Vec<LonLat> {
        let o = self.projection.to_xy(self.origin);
        let x0 = o.x + c.col as f64 * self.cell_side_m;
        let y0 = o.y + c.row as f64 * self.cell_side_m;
        let s = self.cell_side_m;
        [
            (x0, y0),
            (x0 + s, y0),
            (x0 + s, y0 + s),
            (x0, y0 + s),
            (x0, y0),
        ]
        .into_iter()
        .map(|(x, y)| self.projection.to_lonlat(Xy::new(x, y)))
        .collect()
    }

    pub fn cell_center(&self, c: CellId) -> LonLat {
        let o = self.projection.to_xy(self.origin);
        self.projection.to_lonlat(Xy::new(
            o.x + (c.col as f64 + 0.5) * self.cell_side_m,
            o.y + (c.row as f64 + 0.5) * self.cell_side_m,
        ))
    }

    /// Feature for one cell with `row`/`col` plus any extra properties.
    pub fn cell_feature(&self, c: CellId, extra: serde_json::Map<String, Value>) -> Value {
        let coords: Vec<Value> = self
            .cell_ring(c)
            .iter()
            .map(|p| json!([p.lon, p.lat]))
            .collect();
        let mut props = serde_json::Map::new();
        props.insert("row".into(), json!(c.row));
        props.insert("col".into(), json!(c.col));
        props.extend(extra);
        json!({
            "type": "Feature",
            "properties": props,
            "geometry": { "type": "Polygon", "coordinates": [coords] }
        })
    }

    /// FeatureCollection of active cells. The `grid` member carries what
    /// [`Grid::from_geojson`] needs to rebuild the grid exactly.
    pub fn to_geojson(&self) -> Value {
        let features: Vec<Value> = self
            .active
            .iter()
            .map(|c| self.cell_feature(*c, Default::default()))
            .collect();
        json!({
            "type": "FeatureCollection",
            "grid": {
                "origin": [self.origin.lon, self.origin.lat],
                "cell_side_m": self.cell_side_m,
                "n_rows": self.n_rows,
                "n_cols": self.n_cols,
                "projection": "local-equirectangular",
                "m_per_deg_lon": self.projection.m_per_deg_lon,
                "m_per_deg_lat": self.projection.m_per_deg_lat,
                "anchor": [self.projection.anchor.lon, self.projection.anchor.lat],
            },
            "features": features,
        })
    }

    pub fn from_geojson(v: &Value) -> Result<Grid> {
        let meta = v
            .get("grid")
            .ok_or_else(|| Error::invalid("grid GeoJSON lacks the `grid` member"))?;
        let f = |k: &str| {
            meta.get(k)
                .and_then(Value::as_f64)
                .ok_or_else(|| Error::invalid(format!("grid metadata lacks {k}")))
        };
        let pt = |k: &str| -> Result<LonLat> {
            let a = meta.get(k).and_then(Value::as_array);
            match a.map(|a| {
                (
                    a.first().and_then(Value::as_f64),
                    a.get(1).and_then(Value::as_f64),
                )
            }) {
                Some((Some(lon), Some(lat))) => Ok(LonLat::new(lon, lat)),
                _ => Err(Error::invalid(format!("grid metadata lacks {k}"))),
            }
        };
        let mut active = BTreeSet::new();
        for feat in v
            .get("features")
            .and_then(Value::as_array)
            .into_iter()
            .flatten()
        {
            let row = feat.pointer("/properties/row").and_then(Value::as_u64);
            let col = feat.pointer("/properties/col").and_then(Value::as_u64);
            match (row, col) {
                (Some(r), Some(c)) => active.insert(CellId::new(r as u32, c as u32)),
                _ => return Err(Error::invalid("grid feature without row/col")),
            };
        }
        let grid = Grid {
            origin: pt("origin")?,
            cell_side_m: f("cell_side_m")?,
            n_rows: f("n_rows")? as u32,
            n_cols: f("n_cols")? as u32,
            active,
            projection: LocalProjection {
                anchor: pt("anchor")?,
                m_per_deg_lon: f("m_per_deg_lon")?,
                m_per_deg_lat: f("m_per_deg_lat")?,
            },
        };
        if grid
            .active
            .iter()
            .any(|c| c.row >= grid.n_rows || c.col >= grid.n_cols)
        {
            return Err(Error::invalid("grid feature outside declared bounds"));
        }
        Ok(grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_area(km: f64) -> OperationArea {
        OperationArea::rectangle_km("sq", LonLat::new(9.19, 45.46), km, km).unwrap()
    }

    #[test]
    fn exact_tiling_of_two_km_square() {
        let g = Grid::build(&square_area(2.0), 500.0).unwrap();
        assert_eq!((g.n_rows, g.n_cols), (4, 4));
        assert_eq!(g.active.len(), 16);
    }

    #[test]
    fn zero_side_rejected() {
        assert!(Grid::build(&square_area(2.0), 0.0).is_err());
        assert!(Grid::build(&square_area(2.0), -5.0).is_err());
    }

    #[test]
    fn locate_origin_and_one_cell_east() {
        let g = Grid::build(&square_area(2.0), 500.0).unwrap();
        assert_eq!(g.locate(g.origin), Some(CellId::new(0, 0)));
        let o = g.projection.to_xy(g.origin);
        let east = g.projection.to_lonlat(Xy::new(o.x + 501.0, o.y + 1.0));
        assert_eq!(g.locate(east), Some(CellId::new(0, 1)));
        let edge = g.projection.to_lonlat(Xy::new(o.x + 500.0, o.y + 500.0));
        assert_eq!(g.locate(edge), Some(CellId::new(1, 1)));
        let outside = g.projection.to_lonlat(Xy::new(o.x - 1.0, o.y));
        assert_eq!(g.locate(outside), None);
    }

    #[test]
    fn queen_neighbourhood_sizes() {
        let g = Grid::build(&square_area(5.0), 500.0).unwrap();
        let interior = CellId::new(5, 5);
        assert_eq!(g.neighbors(interior, 1).unwrap().len(), 8);
        assert_eq!(g.neighbors(interior, 2).unwrap().len(), 24);
        assert_eq!(g.neighbors(CellId::new(0, 0), 1).unwrap().len(), 3);
        assert!(g.neighbors(CellId::new(50, 50), 1).is_err());
    }

    #[test]
    fn geojson_import_is_exact() {
        let g = Grid::build(&square_area(3.0), 500.0).unwrap();
        let text = serde_json::to_string(&g.to_geojson()).unwrap();
        let back = Grid::from_geojson(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, g);
    }
}
