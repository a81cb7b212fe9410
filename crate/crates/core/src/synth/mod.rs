//! Synthetic cities with known ground truth.
//!
//! [`generate_city`] simulates a fleet minute by minute: each cell receives
//! Poisson pickup requests shaped by its planted class, a request takes one
//! of the vehicles parked there (or is lost when none is), and the vehicle
//! reappears after the trip at a destination drawn from a time-dependent,
//! distance-decayed distribution that favours cells of the origin's class.
//! [`generate_series`] skips the fleet and draws demand counts directly.

mod profiles;
mod series;

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

pub use profiles::{planted_profiles, PlantedProfiles};
pub use series::{generate_series, plant_outliers, SeriesScenario, SyntheticSeries};

use crate::error::{Error, Result};
use crate::features::{Calendar, TzName};
use crate::geometry::{LonLat, Xy};
use crate::grid::{CellId, Grid};
use crate::ingest::{
    Cleanliness, Engine, OperationArea, SnapshotRecord, SnapshotSet, Trip, TripSet,
};
use crate::placement::Presence;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellClass {
    Day,
    Night,
    Neutral,
    Airport,
}

impl fmt::Display for CellClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellClass::Day => "day",
            CellClass::Night => "night",
            CellClass::Neutral => "neutral",
            CellClass::Airport => "airport",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLayout {
    /// Day cells in the centre, a night ring around them, neutral outskirts.
    Rings,
    /// Classes drawn independently per cell.
    Random,
}

/// Circular Gaussian bump over the hours of the day.
pub(crate) fn bump(hour: f64, center: f64, width: f64) -> f64 {
    let d = (hour - center).rem_euclid(24.0);
    let d = d.min(24.0 - d);
    (-d * d / (2.0 * width * width)).exp()
}

const PEAK_WIDTH_H: f64 = 1.5;

/// Mean of a bump over the day, so flat shapes carry the same daily mass.
fn bump_mean() -> f64 {
    PEAK_WIDTH_H * (2.0 * std::f64::consts::PI).sqrt() / 24.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CityScenario {
    pub city: String,
    pub center: LonLat,
    pub width_km: f64,
    pub height_km: f64,
    pub cell_side_m: f64,
    pub fleet_size: usize,
    pub days: usize,
    pub start_date: NaiveDate,
    pub timezone: TzName,
    /// Target request rate before thinning.
    pub trips_per_vehicle_day: f64,
    /// Height of the class-specific rush-hour peaks over the base level.
    pub peak_factor: f64,
    /// Demand multiplier on Saturdays and Sundays.
    pub weekend_factor: f64,
    pub layout: ClassLayout,
    /// Class shares for the random layout.
    pub day_share: f64,
    pub night_share: f64,
    pub airport: bool,
    /// Share of the fleet sent to the airport once a week.
    pub airport_share: f64,
    /// Pickup rate of the airport relative to an ordinary cell.
    pub airport_pickup_factor: f64,
    pub distance_decay_km: f64,
    /// Destination weight multiplier for cells of the origin's class.
    pub same_class_bias: f64,
    pub min_trip_min: u32,
    pub max_trip_min: u32,
    pub render_snapshots: bool,
    pub seed: u64,
}

impl Default for CityScenario {
    fn default() -> Self {
        CityScenario {
            city: "synthetic".into(),
            center: LonLat::new(9.19, 45.46),
            width_km: 5.0,
            height_km: 5.0,
            cell_side_m: 500.0,
            fleet_size: 100,
            days: 7,
            start_date: NaiveDate::from_ymd_opt(2017, 1, 2).unwrap(),
            timezone: TzName("UTC".into()),
            trips_per_vehicle_day: 5.0,
            peak_factor: 3.0,
            weekend_factor: 1.0,
            layout: ClassLayout::Rings,
            day_share: 0.3,
            night_share: 0.4,
            airport: false,
            airport_share: 0.9,
            airport_pickup_factor: 4.0,
            distance_decay_km: 1.5,
            same_class_bias: 2.0,
            min_trip_min: 12,
            max_trip_min: 40,
            render_snapshots: true,
            seed: 1,
        }
    }
}

impl CityScenario {
    fn validate(&self) -> Result<()> {
        let positive = [
            self.width_km,
            self.height_km,
            self.cell_side_m,
            self.distance_decay_km,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("scenario dimensions must be positive"));
        }
        if self.fleet_size == 0 || self.days == 0 {
            return Err(Error::invalid(
                "scenario needs at least one vehicle and one day",
            ));
        }
        let rates = [
            self.trips_per_vehicle_day,
            self.peak_factor,
            self.weekend_factor,
            self.same_class_bias,
            self.airport_pickup_factor,
        ];
        if rates.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("scenario rates must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.airport_share)
            || self.day_share + self.night_share > 1.0
            || self.day_share < 0.0
            || self.night_share < 0.0
        {
            return Err(Error::invalid("scenario shares must lie in [0, 1]"));
        }
        if self.min_trip_min < 2 || self.max_trip_min < self.min_trip_min {
            return Err(Error::invalid(
                "trip durations must satisfy 2 <= min <= max",
            ));
        }
        Ok(())
    }

    /// Pickup intensity shape of a class at a local hour.
    fn pickup_shape(&self, class: CellClass, hour: f64) -> f64 {
        let p = self.peak_factor;
        match class {
            CellClass::Day => 0.3 + p * bump(hour, 18.0, PEAK_WIDTH_H),
            CellClass::Night => 0.3 + p * bump(hour, 8.0, PEAK_WIDTH_H),
            CellClass::Neutral => 0.3 + p * bump_mean(),
            CellClass::Airport => self.airport_pickup_factor * (0.3 + p * bump_mean()),
        }
    }

    /// Destination attractiveness of a class at a local hour.
    fn attraction(&self, class: CellClass, hour: f64) -> f64 {
        let p = self.peak_factor;
        match class {
            CellClass::Day => 0.3 + p * bump(hour, 8.0, PEAK_WIDTH_H),
            CellClass::Night => 0.3 + p * bump(hour, 18.0, PEAK_WIDTH_H),
            CellClass::Neutral | CellClass::Airport => 0.3 + p * bump_mean(),
        }
    }
}

/// An interval during which a vehicle stood at one position; minutes are
/// offsets from the scenario start, both ends inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stay {
    pub vehicle: u32,
    pub cell: CellId,
    pub position: LonLat,
    pub from: u32,
    pub to: u32,
}

#[derive(Debug, Clone)]
pub struct SyntheticCity {
    pub scenario: CityScenario,
    pub area: OperationArea,
    pub grid: Grid,
    pub calendar: Calendar,
    pub start: DateTime<Utc>,
    pub vins: Vec<String>,
    pub classes: BTreeMap<CellId, CellClass>,
    pub airport: Option<CellId>,
    pub trips: TripSet,
    pub stays: Vec<Stay>,
    pub snapshots: Option<SnapshotSet>,
    pub requests: u64,
    /// Requests lost because no vehicle was parked in the cell.
    pub thinned: u64,
    pub warnings: Vec<String>,
}

impl SyntheticCity {
    pub fn minute_time(&self, minute: u32) -> DateTime<Utc> {
        self.start + Duration::minutes(minute as i64)
    }

    /// Parked-vehicle presence per cell and day, straight from the stays.
    pub fn presence(&self) -> Presence {
        let mut p = Presence::empty(self.vins.clone(), self.calendar.len());
        for s in &self.stays {
            let first = self.calendar.locate(&self.minute_time(s.from)).map(|x| x.0);
            let last = self.calendar.locate(&self.minute_time(s.to)).map(|x| x.0);
            if let (Some(a), Some(b)) = (first, last) {
                for d in a..=b {
                    p.mark(s.cell, d, s.vehicle);
                }
            }
        }
        p
    }

    /// Writes the ground-truth cell classes as `row,col,class`.
    pub fn write_classes_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["row", "col", "class"])?;
        for (c, k) in &self.classes {
            wtr.write_record([c.row.to_string(), c.col.to_string(), k.to_string()])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))
    }
}

enum State {
    Parked {
        cell: usize,
        pos: LonLat,
        since: u32,
    },
    Driving,
}

fn plant_classes(
    sc: &CityScenario,
    cells: &[CellId],
    grid: &Grid,
    rng: &mut impl Rng,
) -> Vec<CellClass> {
    match sc.layout {
        ClassLayout::Rings => {
            let (rc, cc) = (
                (grid.n_rows as f64 - 1.0) / 2.0,
                (grid.n_cols as f64 - 1.0) / 2.0,
            );
            cells
                .iter()
                .map(|c| {
                    let r = ((c.row as f64 - rc).abs() / (rc + 0.5))
                        .max((c.col as f64 - cc).abs() / (cc + 0.5));
                    if r < 0.35 {
                        CellClass::Day
                    } else if r < 0.7 {
                        CellClass::Night
                    } else {
                        CellClass::Neutral
                    }
                })
                .collect()
        }
        ClassLayout::Random => cells
            .iter()
            .map(|_| {
                let u: f64 = rng.gen();
                if u < sc.day_share {
                    CellClass::Day
                } else if u < sc.day_share + sc.night_share {
                    CellClass::Night
                } else {
                    CellClass::Neutral
                }
            })
            .collect(),
    }
}

fn random_point(grid: &Grid, area: &OperationArea, c: CellId, rng: &mut impl Rng) -> LonLat {
    let o = grid.projection.to_xy(grid.origin);
    for _ in 0..32 {
        let x = o.x + (c.col as f64 + rng.gen_range(0.1..0.9)) * grid.cell_side_m;
        let y = o.y + (c.row as f64 + rng.gen_range(0.1..0.9)) * grid.cell_side_m;
        let p = grid.projection.to_lonlat(Xy::new(x, y));
        if area.contains(p) && grid.locate(p) == Some(c) {
            return p;
        }
    }
    grid.cell_center(c)
}

fn sample_weighted(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Simulates a city. Identical scenarios give identical output.
pub fn generate_city(sc: &CityScenario) -> Result<SyntheticCity> {
    sc.validate()?;
    let area = OperationArea::rectangle_km(sc.city.clone(), sc.center, sc.width_km, sc.height_km)?;
    let grid = Grid::build(&area, sc.cell_side_m)?;
    let tz = sc.timezone.parse()?;
    let calendar = Calendar::new(tz, sc.start_date, sc.days);
    let start = calendar.to_utc(0, 0);
    let mut rng = seed::rng(seed::derive(sc.seed, &[seed::key("city")]));

    // usable cells: centre inside the area
    let cells: Vec<CellId> = grid
        .active
        .iter()
        .copied()
        .filter(|c| area.contains(grid.cell_center(*c)))
        .collect();
    if cells.len() < 2 {
        return Err(Error::invalid("scenario area holds fewer than two cells"));
    }
    let mut classes = plant_classes(sc, &cells, &grid, &mut rng);
    let airport = sc.airport.then(|| {
        let i = cells.len() - 1;
        classes[i] = CellClass::Airport;
        i
    });

    let n = cells.len();
    let centers: Vec<Xy> = cells
        .iter()
        .map(|c| grid.projection.to_xy(grid.cell_center(*c)))
        .collect();
    let decay: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let d = ((centers[i].x - centers[j].x).powi(2)
                        + (centers[i].y - centers[j].y).powi(2))
                    .sqrt()
                        / 1000.0;
                    (-d / sc.distance_decay_km).exp()
                })
                .collect()
        })
        .collect();

    // per-cell request rate per minute, scaled to the target volume
    let mean_shape: f64 = classes
        .iter()
        .map(|k| {
            (0..1440)
                .map(|m| sc.pickup_shape(*k, m as f64 / 60.0))
                .sum::<f64>()
                / 1440.0
        })
        .sum();
    let per_minute_scale =
        sc.trips_per_vehicle_day * sc.fleet_size as f64 / (1440.0 * mean_shape.max(1e-12));
    let hour_of = |m: u32| m as f64 / 60.0 + 1.0 / 120.0;
    let pickup_rate: Vec<Vec<f64>> = [
        CellClass::Day,
        CellClass::Night,
        CellClass::Neutral,
        CellClass::Airport,
    ]
    .iter()
    .map(|k| {
        (0..1440)
            .map(|m| per_minute_scale * sc.pickup_shape(*k, hour_of(m)))
            .collect()
    })
    .collect();
    let attraction: Vec<Vec<f64>> = [
        CellClass::Day,
        CellClass::Night,
        CellClass::Neutral,
        CellClass::Airport,
    ]
    .iter()
    .map(|k| (0..24).map(|h| sc.attraction(*k, h as f64 + 0.5)).collect())
    .collect();
    let class_idx = |k: CellClass| k as usize;

    let vins: Vec<String> = (0..sc.fleet_size).map(|i| format!("V{i:05}")).collect();
    let mut state: Vec<State> = Vec::with_capacity(sc.fleet_size);
    let mut parked: Vec<Vec<u32>> = vec![Vec::new(); n];
    for v in 0..sc.fleet_size {
        let c = rng.gen_range(0..n);
        let pos = random_point(&grid, &area, cells[c], &mut rng);
        state.push(State::Parked {
            cell: c,
            pos,
            since: 0,
        });
        parked[c].push(v as u32);
    }
    let airport_day: Vec<Option<u32>> = (0..sc.fleet_size)
        .map(|_| {
            (airport.is_some() && rng.gen::<f64>() < sc.airport_share).then(|| rng.gen_range(0..7))
        })
        .collect();
    let mut airport_due = vec![false; sc.fleet_size];

    let total_minutes = (sc.days * 1440) as u32;
    let mut arrivals: BTreeMap<u32, Vec<(u32, usize, LonLat)>> = BTreeMap::new();
    let mut stays = Vec::new();
    let mut trips = Vec::new();
    let (mut requests, mut thinned) = (0u64, 0u64);
    let mut weights = vec![0.0; n];

    for minute in 0..total_minutes {
        let now = start + Duration::minutes(minute as i64);
        let (day, local) = calendar
            .locate(&now)
            .unwrap_or((minute as usize / 1440, minute % 1440));
        if local == 0 {
            let weekday = (day % 7) as u32;
            for v in 0..sc.fleet_size {
                if airport_day[v] == Some(weekday) {
                    airport_due[v] = true;
                }
            }
        }
        if let Some(list) = arrivals.remove(&minute) {
            for (v, c, pos) in list {
                state[v as usize] = State::Parked {
                    cell: c,
                    pos,
                    since: minute,
                };
                parked[c].push(v);
            }
        }
        if minute == 0 {
            continue;
        }
        let weekend = !calendar.is_weekday(day.min(calendar.len() - 1));
        let regime = if weekend { sc.weekend_factor } else { 1.0 };
        let hour = (local / 60) as usize;
        for c in 0..n {
            let lambda = pickup_rate[class_idx(classes[c])][local as usize] * regime;
            if lambda <= 0.0 {
                continue;
            }
            let k = Poisson::new(lambda)
                .map_err(|e| Error::Numerical(e.to_string()))?
                .sample(&mut rng) as u64;
            for _ in 0..k {
                requests += 1;
                // vehicles seen at the previous poll
                let eligible: Vec<usize> = (0..parked[c].len())
                    .filter(|&i| matches!(state[parked[c][i] as usize], State::Parked { since, .. } if since < minute))
                    .collect();
                if eligible.is_empty() {
                    thinned += 1;
                    continue;
                }
                let slot = eligible[rng.gen_range(0..eligible.len())];
                let v = parked[c].swap_remove(slot);
                let State::Parked { pos, since, .. } = state[v as usize] else {
                    unreachable!()
                };
                stays.push(Stay {
                    vehicle: v,
                    cell: cells[c],
                    position: pos,
                    from: since,
                    to: minute - 1,
                });
                state[v as usize] = State::Driving;

                let dest = match airport {
                    Some(a) if airport_due[v as usize] && a != c => {
                        airport_due[v as usize] = false;
                        a
                    }
                    _ => {
                        for (d, w) in weights.iter_mut().enumerate() {
                            let bias = if classes[d] == classes[c] {
                                sc.same_class_bias
                            } else {
                                1.0
                            };
                            *w = decay[c][d] * bias * attraction[class_idx(classes[d])][hour];
                        }
                        sample_weighted(&weights, &mut rng)
                    }
                };
                let dest_pos = random_point(&grid, &area, cells[dest], &mut rng);
                let arrive = minute - 1 + rng.gen_range(sc.min_trip_min..=sc.max_trip_min);
                if arrive < total_minutes {
                    trips.push(Trip {
                        vin: vins[v as usize].clone(),
                        start_time: start + Duration::minutes(minute as i64 - 1),
                        end_time: start + Duration::minutes(arrive as i64),
                        origin: pos,
                        destination: dest_pos,
                    });
                    arrivals
                        .entry(arrive)
                        .or_default()
                        .push((v, dest, dest_pos));
                }
            }
        }
    }
    for (v, s) in state.iter().enumerate() {
        if let State::Parked { cell, pos, since } = s {
            stays.push(Stay {
                vehicle: v as u32,
                cell: cells[*cell],
                position: *pos,
                from: *since,
                to: total_minutes - 1,
            });
        }
    }
    stays.sort_by_key(|s| (s.vehicle, s.from));

    let mut warnings = Vec::new();
    if requests > 0 && thinned as f64 > 0.25 * requests as f64 {
        let msg = format!(
            "{:.0}% of {requests} requests found no vehicle and were thinned",
            100.0 * thinned as f64 / requests as f64
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let snapshots = sc
        .render_snapshots
        .then(|| render_snapshots(&stays, &vins, start));
    let mut trip_set = TripSet::new(trips);
    trip_set.source = Some(format!("synthetic:{}", sc.city));
    Ok(SyntheticCity {
        scenario: sc.clone(),
        area,
        grid,
        calendar,
        start,
        vins,
        classes: cells.iter().copied().zip(classes).collect(),
        airport: airport.map(|a| cells[a]),
        trips: trip_set,
        stays,
        snapshots,
        requests,
        thinned,
        warnings,
    })
}

/// One record per vehicle per minute while parked.
fn render_snapshots(stays: &[Stay], vins: &[String], start: DateTime<Utc>) -> SnapshotSet {
    let mut records = Vec::with_capacity(stays.iter().map(|s| (s.to - s.from + 1) as usize).sum());
    let mut trip_no = vec![0u32; vins.len()];
    for s in stays {
        let fuel = 100.0 - (trip_no[s.vehicle as usize] * 7 % 90) as f64;
        trip_no[s.vehicle as usize] += 1;
        for m in s.from..=s.to {
            records.push(SnapshotRecord {
                vin: vins[s.vehicle as usize].clone(),
                timestamp: start + Duration::minutes(m as i64),
                position: s.position,
                fuel,
                interior: Cleanliness::Good,
                exterior: Cleanliness::Good,
                engine: Engine::Combustion,
            });
        }
    }
    let mut set = SnapshotSet::from_records(records);
    set.source = Some("synthetic".into());
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{clean, infer_trips, TripParams};

    fn small() -> CityScenario {
        CityScenario {
            width_km: 2.0,
            height_km: 2.0,
            fleet_size: 20,
            days: 2,
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn zero_demand_is_stationary() {
        let city = generate_city(&CityScenario {
            trips_per_vehicle_day: 0.0,
            ..small()
        })
        .unwrap();
        assert!(city.trips.is_empty());
        assert_eq!(city.stays.len(), 20);
        let snaps = city.snapshots.unwrap();
        assert_eq!(snaps.len(), 20 * 2 * 1440);
        assert!(infer_trips(&snaps, &TripParams::default()).is_empty());
    }

    #[test]
    fn deterministic() {
        let a = generate_city(&small()).unwrap();
        let b = generate_city(&small()).unwrap();
        assert_eq!(a.trips, b.trips);
        assert_eq!(a.snapshots, b.snapshots);
        let c = generate_city(&CityScenario {
            seed: 10,
            ..small()
        })
        .unwrap();
        assert_ne!(a.trips, c.trips);
    }

    #[test]
    fn trips_round_trip_through_inference() {
        let city = generate_city(&small()).unwrap();
        assert!(city.trips.len() > 50);
        let snaps = clean(city.snapshots.clone().unwrap(), &city.area);
        assert_eq!(snaps.report.total_discarded(), 0);
        let inferred = infer_trips(&snaps, &TripParams::default());
        assert_eq!(inferred.trips, city.trips.trips);
    }

    #[test]
    fn stays_partition_each_vehicle_timeline() {
        let city = generate_city(&small()).unwrap();
        for v in 0..20u32 {
            let s: Vec<&Stay> = city.stays.iter().filter(|s| s.vehicle == v).collect();
            assert_eq!(s[0].from, 0);
            for w in s.windows(2) {
                assert!(w[1].from > w[0].to + 10);
            }
        }
    }

    #[test]
    fn airport_is_visited_by_most_of_the_fleet() {
        let sc = CityScenario {
            airport: true,
            days: 7,
            ..small()
        };
        let city = generate_city(&sc).unwrap();
        let a = city.airport.unwrap();
        let p = city.presence();
        let seen: std::collections::BTreeSet<u32> = p.cells[&a].iter().flatten().copied().collect();
        assert!(seen.len() as f64 >= 0.7 * 20.0, "{}", seen.len());
    }

    #[test]
    fn rejects_bad_scenarios() {
        assert!(generate_city(&CityScenario {
            fleet_size: 0,
            ..small()
        })
        .is_err());
        assert!(generate_city(&CityScenario {
            min_trip_min: 30,
            max_trip_min: 20,
            ..small()
        })
        .is_err());
    }
}
