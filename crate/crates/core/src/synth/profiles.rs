use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{bump, CellClass};
use crate::clustering::AvailabilityProfile;
use crate::error::{Error, Result};
use crate::grid::CellId;
use crate::seed;

/// Availability profiles drawn directly around class templates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedProfiles {
    pub per_class: usize,
    pub bin_minutes: u32,
    /// Noise SD as a share of the template range.
    pub noise: f64,
    /// Relative height of the day and night peaks.
    pub amplitude: f64,
    pub airport: bool,
    /// Relative height of the airport peak.
    pub airport_amplitude: f64,
}

impl Default for PlantedProfiles {
    fn default() -> Self {
        PlantedProfiles {
            per_class: 10,
            bin_minutes: 10,
            noise: 0.1,
            amplitude: 0.8,
            airport: false,
            airport_amplitude: 8.0,
        }
    }
}

fn template(class: CellClass, hour: f64, cfg: &PlantedProfiles) -> f64 {
    match class {
        CellClass::Day => 1.0 + cfg.amplitude * bump(hour, 13.0, 2.5),
        CellClass::Night => 1.0 + cfg.amplitude * bump(hour, 1.0, 2.5),
        CellClass::Neutral => 1.0,
        CellClass::Airport => 1.0 + cfg.airport_amplitude * bump(hour, 12.0, 1.0),
    }
}

/// Noisy profiles for `per_class` cells of each class, plus one airport
/// cell when enabled. Cells are laid out row by row in class order.
pub fn planted_profiles(
    cfg: &PlantedProfiles,
    seed: u64,
) -> Result<(Vec<AvailabilityProfile>, Vec<CellClass>)> {
    let bins = crate::features::bins_per_day(cfg.bin_minutes)?;
    if cfg.per_class == 0 || !(cfg.noise >= 0.0) {
        return Err(Error::invalid(
            "planted profiles need at least one cell per class and non-negative noise",
        ));
    }
    let mut rng = seed::rng(seed::derive(seed, &[seed::key("profiles")]));
    // noise scale is tied to the day and night templates
    let sd = cfg.noise * cfg.amplitude;
    let normal =
        Normal::new(0.0, sd.max(f64::MIN_POSITIVE)).map_err(|e| Error::Numerical(e.to_string()))?;
    let mut classes: Vec<CellClass> = [CellClass::Day, CellClass::Night, CellClass::Neutral]
        .into_iter()
        .flat_map(|k| std::iter::repeat_n(k, cfg.per_class))
        .collect();
    if cfg.airport {
        classes.push(CellClass::Airport);
    }
    let mut out = Vec::with_capacity(classes.len());
    for (i, &k) in classes.iter().enumerate() {
        let raw: Vec<f64> = (0..bins)
            .map(|b| {
                let hour = (b as f64 + 0.5) * cfg.bin_minutes as f64 / 60.0;
                let noise = if sd > 0.0 {
                    normal.sample(&mut rng)
                } else {
                    0.0
                };
                (template(k, hour, cfg) + noise).max(0.0)
            })
            .collect();
        let cell = CellId::new((i / 8) as u32, (i % 8) as u32);
        let p = AvailabilityProfile::from_raw(cell, cfg.bin_minutes, &raw)
            .ok_or_else(|| Error::Numerical("planted profile is identically zero".into()))?;
        out.push(p);
    }
    Ok((out, classes))
}
