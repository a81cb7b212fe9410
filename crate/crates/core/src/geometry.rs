//! Planar and spherical helpers for city-scale geometry.
//!
//! Everything that needs metres goes through [`LocalProjection`], an
//! equirectangular projection anchored at a reference point. At city scale
//! (tens of kilometres) its distortion stays well below one percent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in metres (IUGG).
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// A WGS84 position in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LonLat {
    pub lon: f64,
    pub lat: f64,
}

impl LonLat {
    pub const fn new(lon: f64, lat: f64) -> Self {
        LonLat { lon, lat }
    }

    pub fn is_valid(&self) -> bool {
        self.lon.is_finite()
            && self.lat.is_finite()
            && (-180.0..=180.0).contains(&self.lon)
            && (-90.0..=90.0).contains(&self.lat)
    }
}

/// Great-circle distance in metres.
pub fn haversine_m(a: LonLat, b: LonLat) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Planar point in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Xy {
    pub x: f64,
    pub y: f64,
}

impl Xy {
    pub const fn new(x: f64, y: f64) -> Self {
        Xy { x, y }
    }
}

/// Local equirectangular projection: metres = degrees x per-axis scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalProjection {
    pub anchor: LonLat,
    pub m_per_deg_lon: f64,
    pub m_per_deg_lat: f64,
}

impl LocalProjection {
    /// Projection with scale factors evaluated at `scale_lat`, measuring
    /// offsets from `anchor`.
    pub fn new(anchor: LonLat, scale_lat: f64) -> Self {
        let m_per_deg_lat = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        LocalProjection {
            anchor,
            m_per_deg_lon: m_per_deg_lat * scale_lat.to_radians().cos(),
            m_per_deg_lat,
        }
    }

    pub fn to_xy(&self, p: LonLat) -> Xy {
        Xy::new(
            (p.lon - self.anchor.lon) * self.m_per_deg_lon,
            (p.lat - self.anchor.lat) * self.m_per_deg_lat,
        )
    }

    pub fn to_lonlat(&self, p: Xy) -> LonLat {
        LonLat::new(
            self.anchor.lon + p.x / self.m_per_deg_lon,
            self.anchor.lat + p.y / self.m_per_deg_lat,
        )
    }
}

/// Simple polygon given as an open ring (first vertex not repeated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub ring: Vec<LonLat>,
}

impl Polygon {
    /// Builds a polygon from a ring, dropping a repeated closing vertex.
    pub fn new(mut ring: Vec<LonLat>) -> Result<Self> {
        if ring.len() >= 2 && ring.first() == ring.last() {
            ring.pop();
        }
        if ring.len() < 3 {
            return Err(Error::Geometry(format!(
                "polygon needs at least 3 distinct vertices, got {}",
                ring.len()
            )));
        }
        if let Some(bad) = ring.iter().find(|p| !p.is_valid()) {
            return Err(Error::Geometry(format!("vertex out of range: {bad:?}")));
        }
        Ok(Polygon { ring })
    }

    /// Axis-aligned rectangle spanning `[min, max]`.
    pub fn rectangle(min: LonLat, max: LonLat) -> Result<Self> {
        Polygon::new(vec![
            min,
            LonLat::new(max.lon, min.lat),
            max,
            LonLat::new(min.lon, max.lat),
        ])
    }

    pub fn bbox(&self) -> (LonLat, LonLat) {
        let mut min = LonLat::new(f64::INFINITY, f64::INFINITY);
        let mut max = LonLat::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.ring {
            min.lon = min.lon.min(p.lon);
            min.lat = min.lat.min(p.lat);
            max.lon = max.lon.max(p.lon);
            max.lat = max.lat.max(p.lat);
        }
        (min, max)
    }

    /// Vertex centroid of the bounding box.
    pub fn bbox_center(&self) -> LonLat {
        let (min, max) = self.bbox();
        LonLat::new((min.lon + max.lon) / 2.0, (min.lat + max.lat) / 2.0)
    }

    pub fn project(&self, proj: &LocalProjection) -> Vec<Xy> {
        self.ring.iter().map(|p| proj.to_xy(*p)).collect()
    }

    /// Closed-polygon containment: boundary points count as inside.
    pub fn contains(&self, p: LonLat) -> bool {
        let ring: Vec<Xy> = self.ring.iter().map(|v| Xy::new(v.lon, v.lat)).collect();
        point_in_ring(&ring, Xy::new(p.lon, p.lat))
    }

    pub fn is_simple(&self) -> bool {
        let ring: Vec<Xy> = self.ring.iter().map(|v| Xy::new(v.lon, v.lat)).collect();
        ring_is_simple(&ring)
    }
}

/// Signed shoelace area (positive for counter-clockwise rings).
pub fn signed_area(ring: &[Xy]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    acc / 2.0
}

pub fn ring_area(ring: &[Xy]) -> f64 {
    signed_area(ring).abs()
}

fn on_segment(p: Xy, a: Xy, b: Xy) -> bool {
    let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    let scale = (b.x - a.x).abs().max((b.y - a.y).abs()).max(1e-300);
    if cross.abs() > 1e-12 * scale * scale.max(1.0) {
        return false;
    }
    p.x >= a.x.min(b.x) - 1e-12 * scale
        && p.x <= a.x.max(b.x) + 1e-12 * scale
        && p.y >= a.y.min(b.y) - 1e-12 * scale
        && p.y <= a.y.max(b.y) + 1e-12 * scale
}

/// Even-odd containment test with boundary points reported as inside.
pub fn point_in_ring(ring: &[Xy], p: Xy) -> bool {
    let n = ring.len();
    let mut inside = false;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        if on_segment(p, a, b) {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

fn orientation(a: Xy, b: Xy, c: Xy) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn segments_intersect(p1: Xy, p2: Xy, q1: Xy, q2: Xy) -> bool {
    let d1 = orientation(q1, q2, p1);
    let d2 = orientation(q1, q2, p2);
    let d3 = orientation(p1, p2, q1);
    let d4 = orientation(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(p1, q1, q2))
        || (d2 == 0.0 && on_segment(p2, q1, q2))
        || (d3 == 0.0 && on_segment(q1, p1, p2))
        || (d4 == 0.0 && on_segment(q2, p1, p2))
}

/// True when no two non-adjacent edges of the ring touch.
pub fn ring_is_simple(ring: &[Xy]) -> bool {
    let n = ring.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a1, a2) = (ring[i], ring[(i + 1) % n]);
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let (b1, b2) = (ring[j], ring[(j + 1) % n]);
            if segments_intersect(a1, a2, b1, b2) {
                return false;
            }
        }
    }
    ring_area(ring) > 0.0
}

/// Sutherland-Hodgman clip of an arbitrary ring against an axis-aligned
/// rectangle. The result may contain degenerate zero-width bridges when the
/// subject is concave, which leaves its area exact.
pub fn clip_ring_to_rect(ring: &[Xy], min: Xy, max: Xy) -> Vec<Xy> {
    type Inside = fn(Xy, Xy, Xy) -> bool;
    type Cut = fn(Xy, Xy, Xy, Xy) -> Xy;
    let edges: [(Inside, Cut); 4] = [
        (|p, lo, _| p.x >= lo.x, |a, b, lo, _| lerp_x(a, b, lo.x)),
        (|p, _, hi| p.x <= hi.x, |a, b, _, hi| lerp_x(a, b, hi.x)),
        (|p, lo, _| p.y >= lo.y, |a, b, lo, _| lerp_y(a, b, lo.y)),
        (|p, _, hi| p.y <= hi.y, |a, b, _, hi| lerp_y(a, b, hi.y)),
    ];
    let mut out = ring.to_vec();
    for (inside, cut) in edges {
        if out.is_empty() {
            break;
        }
        let input = std::mem::take(&mut out);
        let n = input.len();
        for i in 0..n {
            let cur = input[i];
            let prev = input[(i + n - 1) % n];
            let (cin, pin) = (inside(cur, min, max), inside(prev, min, max));
            if cin {
                if !pin {
                    out.push(cut(prev, cur, min, max));
                }
                out.push(cur);
            } else if pin {
                out.push(cut(prev, cur, min, max));
            }
        }
    }
    out
}

fn lerp_x(a: Xy, b: Xy, x: f64) -> Xy {
    let t = (x - a.x) / (b.x - a.x);
    Xy::new(x, a.y + t * (b.y - a.y))
}

fn lerp_y(a: Xy, b: Xy, y: f64) -> Xy {
    let t = (y - a.y) / (b.y - a.y);
    Xy::new(a.x + t * (b.x - a.x), y)
}

/// Area of the intersection of two arbitrary simple polygons, in the
/// planar units of their coordinates.
pub fn intersection_area(a: &[Xy], b: &[Xy]) -> f64 {
    use geo::{Area, BooleanOps};
    let to_geo = |ring: &[Xy]| {
        let coords: Vec<(f64, f64)> = ring.iter().map(|p| (p.x, p.y)).collect();
        geo::Polygon::new(geo::LineString::from(coords), vec![])
    };
    to_geo(a).intersection(&to_geo(b)).unsigned_area()
}

/// Intersection polygons of two simple rings (possibly several pieces).
pub fn intersection_rings(a: &[Xy], b: &[Xy]) -> Vec<Vec<Xy>> {
    use geo::BooleanOps;
    let to_geo = |ring: &[Xy]| {
        let coords: Vec<(f64, f64)> = ring.iter().map(|p| (p.x, p.y)).collect();
        geo::Polygon::new(geo::LineString::from(coords), vec![])
    };
    to_geo(a)
        .intersection(&to_geo(b))
        .0
        .into_iter()
        .map(|poly| {
            let mut pts: Vec<Xy> = poly
                .exterior()
                .0
                .iter()
                .map(|c| Xy::new(c.x, c.y))
                .collect();
            if pts.len() >= 2 && pts.first() == pts.last() {
                pts.pop();
            }
            pts
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> Vec<Xy> {
        vec![
            Xy::new(0.0, 0.0),
            Xy::new(1.0, 0.0),
            Xy::new(1.0, 1.0),
            Xy::new(0.0, 1.0),
        ]
    }

    #[test]
    fn boundary_counts_as_inside() {
        let sq = unit_square();
        assert!(point_in_ring(&sq, Xy::new(0.5, 0.0)));
        assert!(point_in_ring(&sq, Xy::new(1.0, 1.0)));
        assert!(point_in_ring(&sq, Xy::new(0.5, 0.5)));
        assert!(!point_in_ring(&sq, Xy::new(1.0 + 1e-6, 0.5)));
    }

    #[test]
    fn bowtie_is_not_simple() {
        let bowtie = vec![
            Xy::new(0.0, 0.0),
            Xy::new(1.0, 1.0),
            Xy::new(1.0, 0.0),
            Xy::new(0.0, 1.0),
        ];
        assert!(!ring_is_simple(&bowtie));
        assert!(ring_is_simple(&unit_square()));
    }

    #[test]
    fn clip_concave_ring_keeps_area() {
        // L-shape of area 3, clipped to the lower-left 1.5 x 1.5 square.
        let l = vec![
            Xy::new(0.0, 0.0),
            Xy::new(2.0, 0.0),
            Xy::new(2.0, 1.0),
            Xy::new(1.0, 1.0),
            Xy::new(1.0, 2.0),
            Xy::new(0.0, 2.0),
        ];
        assert!((ring_area(&l) - 3.0).abs() < 1e-12);
        let clipped = clip_ring_to_rect(&l, Xy::new(0.0, 0.0), Xy::new(1.5, 1.5));
        assert!((ring_area(&clipped) - 2.0).abs() < 1e-12);
        assert!((intersection_area(&l, &clipped) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn haversine_one_degree_latitude() {
        let d = haversine_m(LonLat::new(9.0, 45.0), LonLat::new(9.0, 46.0));
        assert!((d - 111_195.0).abs() < 1.0, "{d}");
    }

    #[test]
    fn projection_round_trip() {
        let proj = LocalProjection::new(LonLat::new(9.1, 45.4), 45.46);
        let p = LonLat::new(9.23, 45.51);
        let back = proj.to_lonlat(proj.to_xy(p));
        assert!((back.lon - p.lon).abs() < 1e-12 && (back.lat - p.lat).abs() < 1e-12);
    }

    #[test]
    fn polygon_rejects_degenerate_rings() {
        assert!(Polygon::new(vec![LonLat::new(0.0, 0.0), LonLat::new(1.0, 1.0)]).is_err());
        let closed = Polygon::new(vec![
            LonLat::new(0.0, 0.0),
            LonLat::new(1.0, 0.0),
            LonLat::new(1.0, 1.0),
            LonLat::new(0.0, 0.0),
        ])
        .unwrap();
        assert_eq!(closed.ring.len(), 3);
    }
}
