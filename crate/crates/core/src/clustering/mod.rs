//! Usage-pattern clustering of cells from their daily availability profile.

mod dtw;
mod pam;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use dtw::dtw_distance;
pub use pam::{adjusted_rand_index, pam, select_k, silhouette, DistanceMatrix, PamResult};

use crate::error::{Error, Result};
use crate::features::{bins_per_day, Calendar};
use crate::grid::{CellId, Grid};
use crate::ingest::SnapshotSet;

/// Mean daily availability of one cell, normalised by its overall mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AvailabilityProfile {
    pub cell: CellId,
    pub bin_minutes: u32,
    pub values: Vec<f64>,
    /// Mean number of parked vehicles before normalisation.
    pub raw_mean: f64,
}

impl AvailabilityProfile {
    /// Normalises raw per-bin availability; `None` for a cell that never
    /// hosts a vehicle.
    pub fn from_raw(cell: CellId, bin_minutes: u32, raw: &[f64]) -> Option<Self> {
        let mean = raw.iter().sum::<f64>() / raw.len().max(1) as f64;
        (mean > 0.0).then(|| AvailabilityProfile {
            cell,
            bin_minutes,
            values: raw.iter().map(|v| v / mean).collect(),
            raw_mean: mean,
        })
    }

    pub fn range(&self) -> f64 {
        profile_range(&self.values)
    }
}

fn profile_range(v: &[f64]) -> f64 {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| {
            (l.min(*x), h.max(*x))
        });
    hi - lo
}

/// Availability per cell and bin: at every poll, the number of vehicles
/// parked in the cell; averaged over the polls inside each bin, then over
/// days, then divided by the cell mean.
pub fn availability_profiles(
    snapshots: &SnapshotSet,
    grid: &Grid,
    calendar: &Calendar,
    bin_minutes: u32,
) -> Result<Vec<AvailabilityProfile>> {
    let per_day = bins_per_day(bin_minutes)?;
    let slot = |t: &DateTime<Utc>| {
        calendar
            .locate(t)
            .map(|(d, m)| (d, m as usize / bin_minutes as usize))
    };
    // polls per (day, bin)
    let mut polls: BTreeMap<(usize, usize), u32> = BTreeMap::new();
    let mut last: Option<DateTime<Utc>> = None;
    for r in &snapshots.records {
        if last != Some(r.timestamp) {
            last = Some(r.timestamp);
            if let Some(s) = slot(&r.timestamp) {
                *polls.entry(s).or_default() += 1;
            }
        }
    }
    if polls.is_empty() {
        return Err(Error::InsufficientData(
            "no snapshots inside the calendar".into(),
        ));
    }
    let mut counts: HashMap<(CellId, usize, usize), u64> = HashMap::new();
    for r in &snapshots.records {
        if let (Some(c), Some(s)) = (grid.locate_active(r.position), slot(&r.timestamp)) {
            *counts.entry((c, s.0, s.1)).or_default() += 1;
        }
    }
    let mut cells: Vec<CellId> = counts.keys().map(|k| k.0).collect();
    cells.sort_unstable();
    cells.dedup();
    // days observed per bin
    let mut days_per_bin = vec![0usize; per_day];
    for &(_, b) in polls.keys() {
        days_per_bin[b] += 1;
    }
    let profiles = cells
        .into_iter()
        .filter_map(|cell| {
            let raw: Vec<f64> = (0..per_day)
                .map(|b| {
                    if days_per_bin[b] == 0 {
                        return 0.0;
                    }
                    let total: f64 = polls
                        .iter()
                        .filter(|((_, pb), _)| *pb == b)
                        .map(|(&(d, _), &n)| {
                            counts.get(&(cell, d, b)).copied().unwrap_or(0) as f64 / n as f64
                        })
                        .sum();
                    total / days_per_bin[b] as f64
                })
                .collect();
            AvailabilityProfile::from_raw(cell, bin_minutes, &raw)
        })
        .collect();
    Ok(profiles)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UsageLabel {
    Day,
    Night,
    Neutral,
    HighIntensity,
}

impl fmt::Display for UsageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UsageLabel::Day => "day",
            UsageLabel::Night => "night",
            UsageLabel::Neutral => "neutral",
            UsageLabel::HighIntensity => "high-intensity",
        })
    }
}

/// Thresholds of the labelling rules. Windows are minutes of the day,
/// start inclusive, end exclusive; the night window wraps midnight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelRules {
    pub high_intensity_factor: f64,
    pub neutral_range: f64,
    pub day_window: (u32, u32),
    pub night_window: (u32, u32),
}

impl Default for LabelRules {
    fn default() -> Self {
        LabelRules {
            high_intensity_factor: 3.0,
            neutral_range: 0.2,
            day_window: (9 * 60, 17 * 60),
            night_window: (21 * 60, 6 * 60),
        }
    }
}

fn in_window(minute: u32, (start, end): (u32, u32)) -> bool {
    if start <= end {
        minute >= start && minute < end
    } else {
        minute >= start || minute < end
    }
}

/// Labels cluster mean profiles. In order: high-intensity when the range
/// exceeds the factor times the median range of the other clusters;
/// neutral when the range is below the threshold; then day or night by the
/// peak bin's midpoint; anything else is neutral.
pub fn label_profiles(means: &[Vec<f64>], bin_minutes: u32, rules: &LabelRules) -> Vec<UsageLabel> {
    let ranges: Vec<f64> = means.iter().map(|m| profile_range(m)).collect();
    means
        .iter()
        .enumerate()
        .map(|(c, mean)| {
            let mut others: Vec<f64> = ranges
                .iter()
                .enumerate()
                .filter(|(o, _)| *o != c)
                .map(|(_, r)| *r)
                .collect();
            if !others.is_empty() {
                others.sort_by(f64::total_cmp);
                let k = others.len();
                let median = if k % 2 == 1 {
                    others[k / 2]
                } else {
                    (others[k / 2 - 1] + others[k / 2]) / 2.0
                };
                if ranges[c] > rules.high_intensity_factor * median {
                    return UsageLabel::HighIntensity;
                }
            }
            if ranges[c] < rules.neutral_range {
                return UsageLabel::Neutral;
            }
            // first maximum
            let peak = mean
                .iter()
                .enumerate()
                .fold(0, |b, (i, v)| if *v > mean[b] { i } else { b });
            let minute = peak as u32 * bin_minutes + bin_minutes / 2;
            if in_window(minute, rules.day_window) {
                UsageLabel::Day
            } else if in_window(minute, rules.night_window) {
                UsageLabel::Night
            } else {
                UsageLabel::Neutral
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    /// Sakoe-Chiba band in bins.
    pub band_bins: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub rules: LabelRules,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            band_bins: 12,
            k_min: 2,
            k_max: 8,
            rules: LabelRules::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterResult {
    pub k: usize,
    pub cells: Vec<CellId>,
    /// Cluster of each cell, aligned with `cells`.
    pub assignment: Vec<usize>,
    /// Medoid cell of each cluster.
    pub medoids: Vec<CellId>,
    pub silhouette: Vec<(usize, f64)>,
    pub labels: Vec<UsageLabel>,
    /// Mean normalised profile of each cluster.
    pub mean_profiles: Vec<Vec<f64>>,
    pub bin_minutes: u32,
}

impl ClusterResult {
    pub fn label_of(&self, cell: CellId) -> Option<UsageLabel> {
        let i = self.cells.iter().position(|c| *c == cell)?;
        Some(self.labels[self.assignment[i]])
    }

    /// Label of every clustered cell.
    pub fn cell_labels(&self) -> BTreeMap<CellId, UsageLabel> {
        self.cells
            .iter()
            .zip(&self.assignment)
            .map(|(c, a)| (*c, self.labels[*a]))
            .collect()
    }
}

/// DTW distances between all pairs of profiles.
pub fn dtw_matrix(profiles: &[AvailabilityProfile], band: usize) -> Result<DistanceMatrix> {
    let n = profiles.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let upper: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| dtw_distance(&profiles[i].values, &profiles[j].values, band))
        .collect::<Result<_>>()?;
    DistanceMatrix::from_upper(n, &upper)
}

/// DTW distances, silhouette choice of k, PAM and labelling.
pub fn cluster_profiles(
    profiles: &[AvailabilityProfile],
    cfg: &ClusterConfig,
) -> Result<ClusterResult> {
    let mut profiles = profiles.to_vec();
    profiles.sort_by_key(|p| p.cell);
    let bin_minutes = profiles.first().map_or(10, |p| p.bin_minutes);
    if profiles
        .iter()
        .any(|p| p.bin_minutes != bin_minutes || p.values.len() != profiles[0].values.len())
    {
        return Err(Error::invalid("profiles differ in bin width"));
    }
    let d = dtw_matrix(&profiles, cfg.band_bins)?;
    let (k, silhouette) = select_k(&d, cfg.k_min, cfg.k_max)?;
    let fit = pam(&d, k)?;
    let len = profiles[0].values.len();
    let mean_profiles: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let members: Vec<&AvailabilityProfile> = profiles
                .iter()
                .zip(&fit.assignment)
                .filter(|(_, a)| **a == c)
                .map(|(p, _)| p)
                .collect();
            (0..len)
                .map(|b| members.iter().map(|p| p.values[b]).sum::<f64>() / members.len() as f64)
                .collect()
        })
        .collect();
    let labels = label_profiles(&mean_profiles, bin_minutes, &cfg.rules);
    Ok(ClusterResult {
        k,
        cells: profiles.iter().map(|p| p.cell).collect(),
        medoids: fit.medoids.iter().map(|&m| profiles[m].cell).collect(),
        assignment: fit.assignment,
        silhouette,
        labels,
        mean_profiles,
        bin_minutes,
    })
}

fn flush<W: Write>(mut wtr: csv::Writer<W>) -> Result<()> {
    wtr.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn write_assignment_csv<W: Write>(w: W, r: &ClusterResult) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["row", "col", "cluster", "label"])?;
    for (c, a) in r.cells.iter().zip(&r.assignment) {
        wtr.write_record([
            c.row.to_string(),
            c.col.to_string(),
            a.to_string(),
            r.labels[*a].to_string(),
        ])?;
    }
    flush(wtr)
}

/// One row per bin with the mean profile of every cluster.
pub fn write_profiles_csv<W: Write>(w: W, r: &ClusterResult) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["bin".to_string(), "minute".to_string()];
    header.extend((0..r.k).map(|c| format!("cluster_{c}_{}", r.labels[c])));
    wtr.write_record(&header)?;
    let len = r.mean_profiles.first().map_or(0, Vec::len);
    for b in 0..len {
        let mut rec = vec![b.to_string(), (b as u32 * r.bin_minutes).to_string()];
        rec.extend(r.mean_profiles.iter().map(|m| format!("{:.6}", m[b])));
        wtr.write_record(&rec)?;
    }
    flush(wtr)
}

pub fn labels_geojson(grid: &Grid, r: &ClusterResult) -> Value {
    let features: Vec<Value> = r
        .cells
        .iter()
        .zip(&r.assignment)
        .map(|(c, a)| {
            let mut props = serde_json::Map::new();
            props.insert("cluster".into(), json!(a));
            props.insert("label".into(), json!(r.labels[*a].to_string()));
            grid.cell_feature(*c, props)
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}
