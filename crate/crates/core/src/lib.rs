//! Analytics for free-floating car-sharing fleets.
//!
//! The pipeline starts from raw availability snapshots (which vehicle is
//! parked where, polled every minute), infers trips from disappearances and
//! builds per-cell demand series on a square grid. On top of that it offers
//! demand forecasters, usage-pattern clustering of cells, a Join Count test
//! for spatial autocorrelation of cell classes, Lasso regression of demand
//! against census and point-of-interest indicators, and ranking of cells for
//! maintenance-facility placement. [`synth`] generates synthetic cities with
//! known ground truth for every stage.

pub mod clustering;
pub mod error;
pub mod features;
pub mod forecasting;
pub mod geometry;
pub mod grid;
pub mod ingest;
pub mod lasso;
pub mod placement;
pub mod seed;
pub mod spatial_stats;
pub mod synth;

pub use clustering::{AvailabilityProfile, ClusterConfig, ClusterResult, UsageLabel};
pub use error::{Error, Result};
pub use features::{Calendar, EventKind, EventSeries, EventSeriesSet};
pub use forecasting::{ForecastConfig, ForecastReport, Method};
pub use geometry::{LonLat, Polygon};
pub use grid::{CellId, Grid};
pub use ingest::{OperationArea, SnapshotRecord, SnapshotSet, Trip, TripSet};
pub use lasso::{DesignMatrix, LassoConfig, LassoFit};
pub use placement::{CoverageTable, Presence};
pub use spatial_stats::{JoinCountReport, LabelledLattice};
pub use synth::{CityScenario, SeriesScenario, SyntheticCity};
