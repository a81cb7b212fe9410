use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::{Deserialize, Serialize};

use ffcs_core::clustering::ClusterConfig;
use ffcs_core::forecasting::ForecastConfig;
use ffcs_core::ingest::{FieldMapping, InputFormat, TripParams};
use ffcs_core::lasso::{LassoConfig, SelectionRule};
use ffcs_core::placement::WindowMode;
use ffcs_core::spatial_stats::Sampling;

use crate::InputError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub snapshots: Option<PathBuf>,
    /// Inferred from the file extension when unset.
    pub snapshot_format: Option<InputFormat>,
    pub area: Option<PathBuf>,
    pub pois: Option<PathBuf>,
    pub census: Option<PathBuf>,
    /// Cached grid GeoJSON; rebuilt from the area when unset.
    pub grid: Option<PathBuf>,
    /// Trips CSV; inferred from the snapshots when unset.
    pub trips: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub bin_minutes: u32,
    /// Cells need more pickups plus drop-offs than this to be modelled.
    pub min_events: u64,
}

impl Default for FeatureSection {
    fn default() -> Self {
        FeatureSection {
            bin_minutes: 60,
            min_events: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressSection {
    #[serde(flatten)]
    pub lasso: LassoConfig,
    pub rule: SelectionRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterSection {
    pub bin_minutes: u32,
    #[serde(flatten)]
    pub cluster: ClusterConfig,
}

impl Default for ClusterSection {
    fn default() -> Self {
        ClusterSection {
            bin_minutes: 10,
            cluster: ClusterConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JoinCountSection {
    pub permutations: usize,
    pub sampling: Sampling,
}

impl Default for JoinCountSection {
    fn default() -> Self {
        JoinCountSection {
            permutations: 999,
            sampling: Sampling::Nonfree,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresenceSource {
    #[default]
    Snapshots,
    Trips,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacementSection {
    pub window_days: usize,
    pub threshold: f64,
    pub top: usize,
    pub mode: WindowMode,
    pub source: PresenceSource,
}

impl Default for PlacementSection {
    fn default() -> Self {
        PlacementSection {
            window_days: 30,
            threshold: 0.5,
            top: 3,
            mode: WindowMode::Sliding,
            source: PresenceSource::Snapshots,
        }
    }
}

/// Everything a run needs. Every section has defaults, so an empty file is
/// a valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub city: String,
    pub timezone: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub cell_side_m: f64,
    pub inputs: Inputs,
    pub fields: FieldMapping,
    pub trips: TripParams,
    pub features: FeatureSection,
    pub forecast: ForecastConfig,
    pub regress: RegressSection,
    pub cluster: ClusterSection,
    pub joincount: JoinCountSection,
    pub placement: PlacementSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            city: "city".into(),
            timezone: "UTC".into(),
            seed: 42,
            output_dir: PathBuf::from("out"),
            cell_side_m: 500.0,
            inputs: Inputs::default(),
            fields: FieldMapping::default(),
            trips: TripParams::default(),
            features: FeatureSection::default(),
            forecast: ForecastConfig::default(),
            regress: RegressSection::default(),
            cluster: ClusterSection::default(),
            joincount: JoinCountSection::default(),
            placement: PlacementSection::default(),
        }
    }
}

impl RunConfig {
    /// Reads a TOML file; relative input paths resolve against its directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| InputError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| InputError(format!("invalid config {}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            let fix = |p: &mut Option<PathBuf>| {
                if let Some(x) = p.as_mut() {
                    if x.is_relative() {
                        *x = base.join(&*x);
                    }
                }
            };
            let i = &mut cfg.inputs;
            for p in [
                &mut i.snapshots,
                &mut i.area,
                &mut i.pois,
                &mut i.census,
                &mut i.grid,
                &mut i.trips,
            ] {
                fix(p);
            }
        }
        Ok(cfg)
    }

    /// Stable digest of the effective configuration.
    pub fn hash(&self) -> String {
        crate::manifest::sha256_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }

    pub fn snapshot_format(&self, path: &Path) -> InputFormat {
        self.inputs.snapshot_format.unwrap_or_else(|| {
            match path.extension().and_then(|e| e.to_str()) {
                Some("csv") => InputFormat::Csv,
                _ => InputFormat::Ndjson,
            }
        })
    }
}

/// Checks that every given path exists before any work starts.
pub fn require_files<'a>(
    paths: impl IntoIterator<Item = (&'a str, Option<&'a Path>)>,
) -> Result<()> {
    for (what, p) in paths {
        match p {
            None => {
                return Err(InputError(format!(
                    "missing input: {what} (set it in the config or pass a flag)"
                ))
                .into())
            }
            Some(p) if !p.is_file() => {
                return Err(InputError(format!("{what} not found: {}", p.display())).into())
            }
            Some(_) => {}
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn sections_parse() {
        let text = r#"
            city = "milan"
            seed = 7
            [inputs]
            snapshots = "snaps.csv"
            [features]
            bin_minutes = 30
            [regress]
            folds = 5
            rule = "one_se"
            [cluster]
            band_bins = 6
            [placement]
            window_days = 15
            source = "trips"
        "#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.features.bin_minutes, 30);
        assert_eq!(cfg.regress.lasso.folds, 5);
        assert_eq!(cfg.cluster.cluster.band_bins, 6);
        assert_eq!(cfg.placement.source, PresenceSource::Trips);
        assert_eq!(
            cfg.snapshot_format(cfg.inputs.snapshots.as_deref().unwrap()),
            InputFormat::Csv
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("colour = 1").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig {
            seed: 1,
            ..RunConfig::default()
        };
        assert_eq!(a.hash(), RunConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
    }
}
