//! `ffcs`: car-sharing analytics from availability snapshots.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ffcs_core::forecasting::Method;
use ffcs_core::placement::WindowMode;
use ffcs_core::spatial_stats::Sampling;

/// Bad or missing user input; exits with status 2.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

#[derive(Parser, Debug)]
#[command(name = "ffcs", version, about = "Free-floating car-sharing analytics")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(short, long, global = true, env = "FFCS_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SnapshotArgs {
    /// Snapshot file (CSV or NDJSON).
    #[arg(long)]
    pub snapshots: Option<PathBuf>,
    /// Operation area GeoJSON.
    #[arg(long)]
    pub area: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TripArgs {
    /// Trips CSV; inferred from snapshots when absent.
    #[arg(long)]
    pub trips: Option<PathBuf>,
    #[command(flatten)]
    pub snap: SnapshotArgs,
    /// Grid GeoJSON from a previous `grid` run.
    #[arg(long)]
    pub grid: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse and clean snapshots; writes the cleaned stream and a discard report.
    Ingest(SnapshotArgs),
    /// Infer trips from snapshots.
    Trips(SnapshotArgs),
    /// Build the square grid over the operation area.
    Grid {
        #[arg(long)]
        area: Option<PathBuf>,
        #[arg(long)]
        cell_side: Option<f64>,
    },
    /// Per-cell event series, feature table and PoI entropy.
    Features {
        #[command(flatten)]
        input: TripArgs,
        #[arg(long)]
        bin_minutes: Option<u32>,
        #[arg(long)]
        pois: Option<PathBuf>,
    },
    /// Fit and score the demand forecasters.
    Forecast {
        #[command(flatten)]
        input: TripArgs,
        /// Comma-separated methods, or `all`.
        #[arg(long, value_delimiter = ',')]
        method: Vec<String>,
        #[arg(long)]
        bin_minutes: Option<u32>,
        #[arg(long)]
        train_frac: Option<f64>,
        /// Forecast drop-offs instead of pickups.
        #[arg(long)]
        dropoffs: bool,
    },
    /// Lasso regression of pickups on census and PoI indicators.
    Regress {
        #[command(flatten)]
        input: TripArgs,
        #[arg(long)]
        census: Option<PathBuf>,
        #[arg(long)]
        pois: Option<PathBuf>,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Cluster cells by daily availability profile.
    Cluster {
        #[command(flatten)]
        input: TripArgs,
        #[arg(long)]
        bin_minutes: Option<u32>,
        #[arg(long)]
        band_bins: Option<usize>,
        #[arg(long)]
        kmax: Option<usize>,
    },
    /// Join Count test on cluster labels.
    Joincount {
        /// Assignment CSV; defaults to the one in the output directory.
        #[arg(long)]
        assignment: Option<PathBuf>,
        #[arg(long)]
        permutations: Option<usize>,
        #[arg(long, value_enum)]
        sampling: Option<SamplingArg>,
    },
    /// Rank cells by distinct vehicles seen within a window.
    ServiceAreas {
        #[command(flatten)]
        input: TripArgs,
        #[arg(long)]
        window_days: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        top: Option<usize>,
        /// Only the first window instead of the best one.
        #[arg(long)]
        first_window: bool,
    },
    /// Generate a synthetic city with ground truth.
    Synth {
        /// Scenario TOML; defaults apply when absent.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Run every stage whose inputs are available.
    Report {
        #[command(flatten)]
        input: TripArgs,
        #[arg(long)]
        census: Option<PathBuf>,
        #[arg(long)]
        pois: Option<PathBuf>,
    },
}

#[derive(clap::ValueEnum, Debug, Clone, Copy)]
pub enum SamplingArg {
    Nonfree,
    Free,
}

impl From<SamplingArg> for Sampling {
    fn from(s: SamplingArg) -> Self {
        match s {
            SamplingArg::Nonfree => Sampling::Nonfree,
            SamplingArg::Free => Sampling::Free,
        }
    }
}

pub fn parse_methods(names: &[String]) -> anyhow::Result<Vec<Method>> {
    let mut out = Vec::new();
    for n in names {
        if n.eq_ignore_ascii_case("all") {
            out.extend(Method::ALL);
        } else {
            out.push(
                n.parse()
                    .map_err(|e: ffcs_core::Error| InputError(e.to_string()))?,
            );
        }
    }
    Ok(out)
}

pub fn window_mode(first: bool) -> WindowMode {
    if first {
        WindowMode::First
    } else {
        WindowMode::Sliding
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let input = e.chain().any(|c| c.downcast_ref::<InputError>().is_some());
            ExitCode::from(if input { 2 } else { 1 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names() {
        let m = parse_methods(&["ha+".into(), "RF".into()]).unwrap();
        assert_eq!(m, [Method::HaPlus, Method::Rf]);
        assert_eq!(parse_methods(&["all".into()]).unwrap().len(), 8);
        assert!(parse_methods(&["lstm".into()]).is_err());
    }

    #[test]
    fn cli_is_well_formed() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
