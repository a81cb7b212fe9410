use super::{OperationArea, SnapshotSet};

/// Drops records outside the operation area. Boundary points are kept.
pub fn clean(mut s: SnapshotSet, area: &OperationArea) -> SnapshotSet {
    let before = s.records.len();
    s.records.retain(|r| area.contains(r.position));
    let dropped = before - s.records.len();
    s.report.outside_area += dropped;
    if dropped > 0 {
        log::info!(
            "discarded {dropped} snapshots outside the {} operation area",
            area.city
        );
    }
    if s.records.is_empty() {
        log::warn!("no snapshots left inside the {} operation area", area.city);
    }
    s
}

#[cfg(test)]
mod tests {
    use chrono::{TimeZone, Utc};

    use super::*;
    use crate::geometry::LonLat;
    use crate::ingest::{Cleanliness, Engine, SnapshotRecord};

    fn rec(vin: &str, minute: i64, p: LonLat) -> SnapshotRecord {
        SnapshotRecord {
            vin: vin.into(),
            timestamp: Utc.timestamp_opt(1_500_000_000 + minute * 60, 0).unwrap(),
            position: p,
            fuel: 50.0,
            interior: Cleanliness::Good,
            exterior: Cleanliness::Good,
            engine: Engine::Combustion,
        }
    }

    #[test]
    fn far_and_boundary_points() {
        let area = OperationArea::rectangle_km("t", LonLat::new(9.19, 45.46), 4.0, 4.0).unwrap();
        let corner = area.polygon.ring[0];
        let set = SnapshotSet::from_records(vec![
            rec("A", 0, LonLat::new(9.19, 45.46)),
            // roughly 500 km south
            rec("B", 0, LonLat::new(9.19, 40.96)),
            rec("C", 0, corner),
        ]);
        let cleaned = clean(set, &area);
        let vins: Vec<_> = cleaned.records.iter().map(|r| r.vin.as_str()).collect();
        assert_eq!(vins, ["A", "C"]);
        assert_eq!(cleaned.report.outside_area, 1);

        let again = clean(cleaned.clone(), &area);
        assert_eq!(again.records, cleaned.records);
    }
}
