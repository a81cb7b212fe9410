use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};

use ffcs_core::clustering::{self, availability_profiles, cluster_profiles};
use ffcs_core::features::{
    bin_events, build_feature_table, busy_cells, census_overlay, read_census_geojson, read_poi_csv,
    write_feature_csv, Calendar, EventKind, PoiProfile, Tz, TzName,
};
use ffcs_core::forecasting::run_forecasts;
use ffcs_core::ingest::{
    self, clean, infer_trips, parse_snapshots, read_trips_csv, write_snapshots_ndjson,
    write_trips_csv,
};
use ffcs_core::lasso::{
    coefficient_table, cv_select, write_coefficients_csv, write_cv_curve_csv, DesignMatrix,
};
use ffcs_core::placement::{
    coverage, presence_from_snapshots, presence_from_trips, select_sites, sites_geojson,
};
use ffcs_core::spatial_stats::{
    join_count_with_permutations, read_assignment_csv, Adjacency, LabelledLattice,
};
use ffcs_core::synth::{generate_city, CityScenario};
use ffcs_core::{seed, Grid, OperationArea, SnapshotSet, TripSet};

use crate::config::{require_files, PresenceSource, RunConfig};
use crate::manifest::{file_digest, Entry, Manifest};
use crate::{parse_methods, window_mode, Cli, Command, InputError, TripArgs};

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    command: String,
    inputs: BTreeMap<String, String>,
    overrides: BTreeMap<String, String>,
    written: Vec<PathBuf>,
}

impl Ctx {
    fn note_input(&mut self, path: &Path) -> Result<()> {
        let digest = file_digest(path)?;
        // files from earlier stages are keyed relative to the output directory
        let key = path.strip_prefix(&self.out).map_or_else(
            |_| path.display().to_string(),
            |p| format!("<out>/{}", p.display()),
        );
        self.inputs.insert(key, digest);
        Ok(())
    }

    fn set<T: ToString>(&mut self, key: &str, value: Option<T>) -> Option<T> {
        if let Some(v) = &value {
            self.overrides.insert(key.into(), v.to_string());
        }
        value
    }

    fn stage_seed(&self, stage: &str) -> u64 {
        seed::derive(self.cfg.seed, &[seed::key(stage)])
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.out.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.written.push(PathBuf::from(name));
        Ok(BufWriter::new(f))
    }

    fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> ffcs_core::Result<()>,
    ) -> Result<()> {
        let mut w = self.create(name)?;
        f(&mut w).with_context(|| format!("writing {name}"))?;
        w.flush()?;
        Ok(())
    }

    fn write_json(&mut self, name: &str, v: &Value) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, v)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let mut manifest = Manifest::load_or_new(&self.out)?;
        let mut hashed = self.cfg.clone();
        hashed.output_dir = PathBuf::new();
        let entry = Entry {
            command: self.command.clone(),
            config_hash: hashed.hash(),
            seed: self.cfg.seed,
            inputs: self.inputs,
            overrides: self.overrides,
        };
        manifest.record(&self.out, &self.written, &entry)?;
        manifest.save(&self.out)?;
        for f in &self.written {
            log::info!("wrote {}", self.out.join(f).display());
        }
        Ok(())
    }
}

/// Resolved input paths: flags first, then the config.
#[derive(Default)]
struct Sources {
    snapshots: Option<PathBuf>,
    area: Option<PathBuf>,
    grid: Option<PathBuf>,
    trips: Option<PathBuf>,
    census: Option<PathBuf>,
    pois: Option<PathBuf>,
}

impl Sources {
    fn new(cfg: &RunConfig, a: &TripArgs) -> Sources {
        let i = &cfg.inputs;
        Sources {
            snapshots: a.snap.snapshots.clone().or_else(|| i.snapshots.clone()),
            area: a.snap.area.clone().or_else(|| i.area.clone()),
            grid: a.grid.clone().or_else(|| i.grid.clone()),
            trips: a.trips.clone().or_else(|| i.trips.clone()),
            census: i.census.clone(),
            pois: i.pois.clone(),
        }
    }

    /// Every path that is set must exist.
    fn check_present(&self) -> Result<()> {
        let all = [
            ("snapshots", &self.snapshots),
            ("area", &self.area),
            ("grid", &self.grid),
            ("trips", &self.trips),
            ("census", &self.census),
            ("pois", &self.pois),
        ];
        require_files(
            all.iter()
                .filter(|(_, p)| p.is_some())
                .map(|(w, p)| (*w, p.as_deref())),
        )
    }

    fn need_trips(&self) -> Result<()> {
        if self.trips.is_none() && self.snapshots.is_none() {
            bail!(InputError("missing input: trips or snapshots".into()));
        }
        Ok(())
    }

    fn need_grid(&self) -> Result<()> {
        if self.grid.is_none() && self.area.is_none() {
            bail!(InputError("missing input: grid or area".into()));
        }
        Ok(())
    }
}

/// Inputs loaded on first use.
struct Data {
    src: Sources,
    area: Option<OperationArea>,
    snapshots: Option<SnapshotSet>,
    grid: Option<Grid>,
    trips: Option<TripSet>,
}

impl Data {
    fn new(src: Sources) -> Data {
        Data {
            src,
            area: None,
            snapshots: None,
            grid: None,
            trips: None,
        }
    }

    fn load_area(&mut self, ctx: &mut Ctx) -> Result<()> {
        if self.area.is_none() {
            if let Some(p) = self.src.area.clone() {
                ctx.note_input(&p)?;
                self.area = Some(
                    OperationArea::load(&p, &ctx.cfg.city)
                        .with_context(|| format!("loading area {}", p.display()))?,
                );
            }
        }
        Ok(())
    }

    fn load_snapshots(&mut self, ctx: &mut Ctx) -> Result<()> {
        if self.snapshots.is_some() {
            return Ok(());
        }
        let Some(p) = self.src.snapshots.clone() else {
            bail!(InputError("missing input: snapshots".into()))
        };
        self.load_area(ctx)?;
        ctx.note_input(&p)?;
        let reader =
            BufReader::new(File::open(&p).with_context(|| format!("opening {}", p.display()))?);
        let format = ctx.cfg.snapshot_format(&p);
        let mut set = parse_snapshots(
            reader,
            format,
            &ctx.cfg.fields,
            Some(&p.display().to_string()),
        )?;
        if let Some(area) = &self.area {
            set = clean(set, area);
        }
        self.snapshots = Some(set);
        Ok(())
    }

    fn load_grid(&mut self, ctx: &mut Ctx) -> Result<()> {
        if self.grid.is_some() {
            return Ok(());
        }
        if let Some(p) = self.src.grid.clone() {
            ctx.note_input(&p)?;
            let v: Value = serde_json::from_str(&fs::read_to_string(&p)?)
                .with_context(|| format!("parsing {}", p.display()))?;
            self.grid = Some(Grid::from_geojson(&v)?);
        } else {
            self.load_area(ctx)?;
            let Some(area) = &self.area else {
                bail!(InputError("missing input: grid or area".into()))
            };
            self.grid = Some(Grid::build(area, ctx.cfg.cell_side_m)?);
        }
        Ok(())
    }

    fn load_trips(&mut self, ctx: &mut Ctx) -> Result<()> {
        if self.trips.is_some() {
            return Ok(());
        }
        if let Some(p) = self.src.trips.clone() {
            ctx.note_input(&p)?;
            self.trips = Some(
                read_trips_csv(File::open(&p)?)
                    .with_context(|| format!("reading {}", p.display()))?,
            );
        } else {
            self.load_snapshots(ctx)?;
            self.trips = Some(infer_trips(
                self.snapshots.as_ref().unwrap(),
                &ctx.cfg.trips,
            ));
        }
        Ok(())
    }

    fn trip_calendar(&self, ctx: &Ctx) -> Result<Calendar> {
        let trips = self.trips.as_ref().unwrap();
        Ok(Calendar::spanning(
            tz(ctx)?,
            trips
                .trips
                .iter()
                .flat_map(|t| [&t.start_time, &t.end_time]),
        )?)
    }

    fn snapshot_calendar(&self, ctx: &Ctx) -> Result<Calendar> {
        let s = self.snapshots.as_ref().unwrap();
        Ok(Calendar::spanning(
            tz(ctx)?,
            s.records.iter().map(|r| &r.timestamp),
        )?)
    }
}

fn tz(ctx: &Ctx) -> Result<Tz> {
    TzName(ctx.cfg.timezone.clone())
        .parse()
        .map_err(|e| InputError(e.to_string()).into())
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &cli.out_dir {
        cfg.output_dir = o.clone();
    }
    let mut ctx = Ctx {
        out: cfg.output_dir.clone(),
        cfg,
        command: String::new(),
        inputs: BTreeMap::new(),
        overrides: BTreeMap::new(),
        written: Vec::new(),
    };
    if let Some(s) = ctx.set("seed", cli.seed) {
        ctx.cfg.seed = s;
    }
    let cmd_name = format!("{:?}", cli.command);
    ctx.command = cmd_name
        .split([' ', '{', '('])
        .next()
        .unwrap_or("")
        .to_lowercase();
    if ctx.command == "serviceareas" {
        ctx.command = "service-areas".into();
    }
    fs::create_dir_all(&ctx.out)
        .with_context(|| format!("creating output directory {}", ctx.out.display()))?;

    match cli.command {
        Command::Ingest(a) => {
            let src = Sources::new(
                &ctx.cfg,
                &TripArgs {
                    snap: a,
                    ..Default::default()
                },
            );
            require_files([("snapshots", src.snapshots.as_deref())])?;
            src.check_present()?;
            let mut data = Data::new(src);
            ingest_cmd(&mut ctx, &mut data)?;
        }
        Command::Trips(a) => {
            let src = Sources::new(
                &ctx.cfg,
                &TripArgs {
                    snap: a,
                    ..Default::default()
                },
            );
            require_files([("snapshots", src.snapshots.as_deref())])?;
            src.check_present()?;
            let mut data = Data::new(Sources { trips: None, ..src });
            trips_cmd(&mut ctx, &mut data)?;
        }
        Command::Grid { area, cell_side } => {
            let area = area.or_else(|| ctx.cfg.inputs.area.clone());
            require_files([("area", area.as_deref())])?;
            if let Some(s) = ctx.set("cell_side_m", cell_side) {
                ctx.cfg.cell_side_m = s;
            }
            let mut data = Data::new(Sources {
                area,
                ..Default::default()
            });
            grid_cmd(&mut ctx, &mut data)?;
        }
        Command::Features {
            input,
            bin_minutes,
            pois,
        } => {
            let mut src = Sources::new(&ctx.cfg, &input);
            src.pois = pois.or(src.pois);
            src.check_present()?;
            src.need_trips()?;
            src.need_grid()?;
            if let Some(b) = ctx.set("bin_minutes", bin_minutes) {
                ctx.cfg.features.bin_minutes = b;
            }
            let mut data = Data::new(src);
            features_cmd(&mut ctx, &mut data)?;
        }
        Command::Forecast {
            input,
            method,
            bin_minutes,
            train_frac,
            dropoffs,
        } => {
            let src = Sources::new(&ctx.cfg, &input);
            src.check_present()?;
            src.need_trips()?;
            src.need_grid()?;
            if !method.is_empty() {
                ctx.overrides.insert("method".into(), method.join(","));
                ctx.cfg.forecast.methods = parse_methods(&method)?;
            }
            if let Some(b) = ctx.set("bin_minutes", bin_minutes) {
                ctx.cfg.features.bin_minutes = b;
            }
            if let Some(f) = ctx.set("train_frac", train_frac) {
                ctx.cfg.forecast.split.train_frac = f;
            }
            let kind = if dropoffs {
                EventKind::Dropoff
            } else {
                EventKind::Pickup
            };
            let mut data = Data::new(src);
            forecast_cmd(&mut ctx, &mut data, kind)?;
        }
        Command::Regress {
            input,
            census,
            pois,
            folds,
        } => {
            let mut src = Sources::new(&ctx.cfg, &input);
            src.census = census.or(src.census);
            src.pois = pois.or(src.pois);
            require_files([
                ("census", src.census.as_deref()),
                ("area", src.area.as_deref()),
            ])?;
            src.check_present()?;
            src.need_trips()?;
            if let Some(f) = ctx.set("folds", folds) {
                ctx.cfg.regress.lasso.folds = f;
            }
            let mut data = Data::new(src);
            regress_cmd(&mut ctx, &mut data)?;
        }
        Command::Cluster {
            input,
            bin_minutes,
            band_bins,
            kmax,
        } => {
            let src = Sources::new(&ctx.cfg, &input);
            require_files([("snapshots", src.snapshots.as_deref())])?;
            src.check_present()?;
            src.need_grid()?;
            if let Some(b) = ctx.set("bin_minutes", bin_minutes) {
                ctx.cfg.cluster.bin_minutes = b;
            }
            if let Some(b) = ctx.set("band_bins", band_bins) {
                ctx.cfg.cluster.cluster.band_bins = b;
            }
            if let Some(k) = ctx.set("kmax", kmax) {
                ctx.cfg.cluster.cluster.k_max = k;
            }
            let mut data = Data::new(src);
            cluster_cmd(&mut ctx, &mut data)?;
        }
        Command::Joincount {
            assignment,
            permutations,
            sampling,
        } => {
            let path = assignment.unwrap_or_else(|| ctx.out.join("cluster_assignment.csv"));
            require_files([("assignment", Some(path.as_path()))])?;
            if let Some(p) = ctx.set("permutations", permutations) {
                ctx.cfg.joincount.permutations = p;
            }
            if let Some(s) = sampling {
                ctx.overrides
                    .insert("sampling".into(), format!("{s:?}").to_lowercase());
                ctx.cfg.joincount.sampling = s.into();
            }
            joincount_cmd(&mut ctx, &path)?;
        }
        Command::ServiceAreas {
            input,
            window_days,
            threshold,
            top,
            first_window,
        } => {
            let src = Sources::new(&ctx.cfg, &input);
            src.check_present()?;
            src.need_grid()?;
            match ctx.cfg.placement.source {
                PresenceSource::Snapshots => {
                    require_files([("snapshots", src.snapshots.as_deref())])?
                }
                PresenceSource::Trips => src.need_trips()?,
            }
            if let Some(w) = ctx.set("window_days", window_days) {
                ctx.cfg.placement.window_days = w;
            }
            if let Some(t) = ctx.set("threshold", threshold) {
                ctx.cfg.placement.threshold = t;
            }
            if let Some(t) = ctx.set("top", top) {
                ctx.cfg.placement.top = t;
            }
            if first_window {
                ctx.overrides.insert("first_window".into(), "true".into());
                ctx.cfg.placement.mode = window_mode(true);
            }
            let mut data = Data::new(src);
            service_cmd(&mut ctx, &mut data)?;
        }
        Command::Synth { scenario } => {
            let mut sc = match &scenario {
                Some(p) => {
                    require_files([("scenario", Some(p.as_path()))])?;
                    ctx.note_input(p)?;
                    let text = fs::read_to_string(p)?;
                    toml::from_str(&text)
                        .map_err(|e| InputError(format!("invalid scenario {}: {e}", p.display())))?
                }
                None => CityScenario::default(),
            };
            if let Some(s) = cli.seed {
                sc.seed = s;
            }
            synth_cmd(&mut ctx, &sc)?;
        }
        Command::Report {
            input,
            census,
            pois,
        } => {
            let mut src = Sources::new(&ctx.cfg, &input);
            src.census = census.or(src.census);
            src.pois = pois.or(src.pois);
            src.check_present()?;
            src.need_trips()?;
            src.need_grid()?;
            let mut data = Data::new(src);
            report_cmd(&mut ctx, &mut data)?;
        }
    }
    ctx.finish()
}

fn ingest_cmd(ctx: &mut Ctx, data: &mut Data) -> Result<()> {
    data.load_snapshots(ctx)?;
    let s = data.snapshots.as_ref().unwrap();
    let span = s
        .time_span()
        .map(|(a, b)| json!([a.to_rfc3339(), b.to_rfc3339()]));
    let report = json!({
        "discards": s.report,
        "records": s.len(),
        "vehicles": s.vins().len(),
        "time_span": span,
    });
    let s = data.snapshots.as_ref().unwrap();
    let mut w = ctx.create("snapshots_clean.ndjson")?;
    write_snapshots_ndjson(&mut w, s)?;
    w.flush()?;
    ctx.write_json("ingest_report.json", &report)
}

fn trips_cmd(ctx: &mut Ctx, data: &mut Data) -> Result<()> {
    data.load_trips(ctx)?;
    let trips = data.trips.as_ref().unwrap();
    let (fleet, days) = match &data.snapshots {
        Some(s) => {
            let days = s
                .time_span()
                .map_or(0.0, |(a, b)| (b - a).num_seconds() as f64 / 86_400.0);
            (s.vins().len(), days)
        }
        None => (0, 0.0),
    };
    let rate = ingest::utilisation_rate(trips, fleet, days).ok();
    let summary = json!({
        "trips": trips.len(),
        "fleet_size": fleet,
        "observation_days": days,
        "trips_per_vehicle_day": rate,
        "jitter_merged": trips.jitter_merged,
        "short_relocations": trips.short_relocations,
    });
    let trips = data.trips.as_ref().unwrap();
    ctx.write_with("trips.csv", |w| write_trips_csv(w, trips))?;
    ctx.write_json("utilisation.json", &summary)?;
    if rate.is_some() && (data.src.area.is_some() || data.src.grid.is_some()) {
        data.load_grid(ctx)?;
        let rows = ingest::cell_utilisation(
            data.trips.as_ref().unwrap(),
            data.grid.as_ref().unwrap(),
            fleet,
            days,
        );
        let mut w = ctx.create("cell_utilisation.csv")?;
        writeln!(
            w,
            "row,col,trips,vehicles_seen,per_fleet_vehicle,per_seen_vehicle"
        )?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{:.6},{:.6}",
                r.cell.row,
                r.cell.col,
                r.trips,
                r.vehicles_seen,
                r.per_fleet_vehicle,
                r.per_seen_vehicle
            )?;
        }
        w.flush()?;
    }
    Ok(())
}

fn grid_cmd(ctx: &mut Ctx, data: &mut Data) -> Result<()> {
    data.load_grid(ctx)?;
    let v = data.grid.as_ref().unwrap().to_geojson();
    ctx.write_json("grid.geojson", &v)
}

fn read_pois(ctx: &mut Ctx, path: Option<&Path>) -> Result<Option<Vec<PoiProfile>>> {
    match path {
        Some(p) => {
            ctx.note_input(p)?;
            Ok(Some(
                read_poi_csv(File::open(p)?).with_context(|| format!("reading {}", p.display()))?,
            ))
        }
        None => Ok(None),
    }
}

fn features_cmd(ctx: &mut Ctx, data: &mut Data) -> Result<()> {
    data.load_trips(ctx)?;
    data.load_grid(ctx)?;
    let cal = data.trip_calendar(ctx)?;
    let (trips, grid) = (data.trips.as_ref().unwrap(), data.grid.as_ref().unwrap());
    let bin = ctx.cfg.features.bin_minutes;
    let pickups = bin_events(trips, grid, &cal, bin, EventKind::Pickup)?;
    let dropoffs = bin_events(trips, grid, &cal, bin, EventKind::Dropoff)?;
    let busy = busy_cells(&pickups, &dropoffs, ctx.cfg.features.min_events);
    let table = build_feature_table(&pickups, grid, &busy, ctx.cfg.forecast.neighbor_hops)?;
    ctx.write_with("features.csv", |w| write_feature_csv(w, &table))?;
    let mut w = ctx.create("cell_events.csv")?;
    writeln!(w, "row,col,pickups,dropoffs,busy")?;
    for (p, d) in pickups.series.iter().zip(&dropoffs.series) {
        writeln!(
            w,
            "{},{},{},{},{}",
            p.cell.row,
            p.cell.col,
            p.total(),
            d.total(),
            busy.contains(&p.cell)
        )?;
    }
    w.flush()?;
    let pois_path = data.src.pois.clone();
    if let Some(pois) = read_pois(ctx, pois_path.as_deref())? {
        let mut w = ctx.create("poi_entropy.csv")?;
        writeln!(w, "area_id,total,entropy")?;
        for p in &pois {
            writeln!(w, "{},{},{:.6}", p.area_id, p.total, p.entropy)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn forecast_cmd(ctx: &mut Ctx, data: &mut Data, kind: EventKind) -> Result<()> {
    data.load_trips(ctx)?;
    data.load_grid(ctx)?;
    let cal = data.trip_calendar(ctx)?;
    let (trips, grid) = (data.trips.as_ref().unwrap(), data.grid.as_ref().unwrap());
    let bin = ctx.cfg.features.bin_minutes;
    let pickups = bin_events(trips, grid, &cal, bin, EventKind::Pickup)?;
    let dropoffs = bin_events(trips, grid, &cal, bin, EventKind::Dropoff)?;
    let busy = busy_cells(&pickups, &dropoffs, ctx.cfg.features.min_events);
    let series = if kind == EventKind::Pickup {
        &pickups
    } else {
        &dropoffs
    };
    let report = run_forecasts(
        series,
        grid,
        &busy,
        &ctx.cfg.forecast,
        ctx.stage_seed("forecast"),
    )?;
    ctx.write_with("forecast_rmse.csv", |w| report.write_rmse_csv(w))?;
    ctx.write_with("forecast_best.csv", |w| report.write_best_csv(w))?;
    ctx.write_json("forecast_summary.json", &report.summary_json())?;
    if report.tagged.is_some() {
        ctx.write_with("forecast_tagged.csv", |w| report.write_tagged_csv(w))?;
    }
    Ok(())
}

fn regress_cmd(ctx: &mut Ctx, data: &mut Data) -> Result<()> {
    data.load_trips(ctx)?;
    data.load_area(ctx)?;
    let census_path = data.src.census.clone().expect("checked");
    ctx.note_input(&census_path)?;
    let v: Value = serde_json::from_str(&fs::read_to_string(&census_path)?)
        .with_context(|| format!("parsing {}", census_path.display()))?;
    let inputs = read_census_geojson(&v)?;
    let pois_path = data.src.pois.clone();
    let pois = read_pois(ctx, pois_path.as_deref())?;
    let table = census_overlay(
        &inputs,
        data.area.as_ref().unwrap(),
        data.trips.as_ref().unwrap(),
    )?;
    let m = DesignMatrix::from_census(&table, pois.as_deref())?;
    let fit = cv_select(&m, &ctx.cfg.regress.lasso, ctx.stage_seed("regress"))?;
    let rows = coefficient_table(&fit, &m, ctx.cfg.regress.rule);
    let step = fit.selected(ctx.cfg.regress.rule);
    let summary = json!({
        "units": m.n_rows(),
        "indicators": m.n_cols(),
        "discarded_units": table.discarded,
        "dropped_rows": m.dropped_rows,
        "dropped_columns": m.dropped_columns,
        "log_transformed": m.log_transformed,
        "lambda_min": fit.lambda_min(),
        "lambda_1se": fit.lambda_1se(),
        "selected_lambda": fit.path.steps[step].lambda,
        "active": fit.path.active_set(step).len(),
    });
    ctx.write_with("lasso_coefficients.csv", |w| {
        write_coefficients_csv(w, &rows)
    })?;
    ctx.write_with("lasso_cv.csv", |w| write_cv_curve_csv(w, &fit))?;
    ctx.write_json("regress_summary.json", &summary)
}

fn cluster_cmd(ctx: &mut Ctx, data: &mut Data) -> Result<()> {
    data.load_snapshots(ctx)?;
    data.load_grid(ctx)?;
    let cal = data.snapshot_calendar(ctx)?;
    let (snaps, grid) = (
        data.snapshots.as_ref().unwrap(),
        data.grid.as_ref().unwrap(),
    );
    let profiles = availability_profiles(snaps, grid, &cal, ctx.cfg.cluster.bin_minutes)?;
    let result = cluster_profiles(&profiles, &ctx.cfg.cluster.cluster)?;
    ctx.write_with("cluster_assignment.csv", |w| {
        clustering::write_assignment_csv(w, &result)
    })?;
    ctx.write_with("cluster_profiles.csv", |w| {
        clustering::write_profiles_csv(w, &result)
    })?;
    let mut w = ctx.create("cluster_silhouette.csv")?;
    writeln!(w, "k,silhouette")?;
    for (k, s) in &result.silhouette {
        writeln!(w, "{k},{s:.6}")?;
    }
    w.flush()?;
    let geo = clustering::labels_geojson(grid, &result);
    ctx.write_json("clusters.geojson", &geo)
}

fn joincount_cmd(ctx: &mut Ctx, path: &Path) -> Result<()> {
    ctx.note_input(path)?;
    let labels = read_assignment_csv(File::open(path)?)
        .with_context(|| format!("reading {}", path.display()))?;
    let lattice = LabelledLattice::new(&labels, &["high-intensity"], Adjacency::Queen)?;
    let jc = &ctx.cfg.joincount;
    let report = join_count_with_permutations(
        &lattice,
        jc.sampling,
        jc.permutations,
        ctx.stage_seed("joincount"),
    )?;
    for n in &report.notes {
        log::warn!("{n}");
    }
    ctx.write_with("joincount.csv", |w| report.write_csv(w))
}

fn service_cmd(ctx: &mut Ctx, data: &mut Data) -> Result<()> {
    data.load_grid(ctx)?;
    let p = &ctx.cfg.placement;
    let (w_days, threshold, top, mode) = (p.window_days, p.threshold, p.top, p.mode);
    let presence = match p.source {
        PresenceSource::Snapshots => {
            data.load_snapshots(ctx)?;
            let cal = data.snapshot_calendar(ctx)?;
            presence_from_snapshots(
                data.snapshots.as_ref().unwrap(),
                data.grid.as_ref().unwrap(),
                &cal,
            )
        }
        PresenceSource::Trips => {
            data.load_trips(ctx)?;
            let cal = data.trip_calendar(ctx)?;
            presence_from_trips(
                data.trips.as_ref().unwrap(),
                data.grid.as_ref().unwrap(),
                &cal,
            )
        }
    };
    let table = coverage(&presence, w_days, mode).map_err(|e| InputError(e.to_string()))?;
    let sites = select_sites(&table, threshold, top);
    if sites.is_empty() {
        log::warn!(
            "no cell reaches {:.0}% of the fleet within {w_days} days",
            threshold * 100.0
        );
    }
    let geo = sites_geojson(data.grid.as_ref().unwrap(), &sites);
    ctx.write_with(&format!("service_coverage_w{w_days}.csv"), |w| {
        table.write_csv(w)
    })?;
    ctx.write_json(&format!("service_sites_w{w_days}.geojson"), &geo)
}

fn synth_cmd(ctx: &mut Ctx, sc: &CityScenario) -> Result<()> {
    let city = generate_city(sc).map_err(|e| InputError(format!("invalid scenario: {e}")))?;
    if let Some(s) = &city.snapshots {
        let mut w = ctx.create("snapshots.ndjson")?;
        write_snapshots_ndjson(&mut w, s)?;
        w.flush()?;
    }
    ctx.write_with("trips_truth.csv", |w| write_trips_csv(w, &city.trips))?;
    ctx.write_with("classes_truth.csv", |w| city.write_classes_csv(w))?;
    ctx.write_json("area.geojson", &city.area.to_geojson())?;
    let summary = json!({
        "scenario": sc,
        "trips": city.trips.len(),
        "requests": city.requests,
        "thinned": city.thinned,
        "airport": city.airport,
        "warnings": city.warnings,
    });
    ctx.write_json("synth_summary.json", &summary)
}

fn report_cmd(ctx: &mut Ctx, data: &mut Data) -> Result<()> {
    if data.src.snapshots.is_some() {
        ingest_cmd(ctx, data)?;
        trips_cmd(ctx, data)?;
    } else {
        data.load_trips(ctx)?;
        let trips = data.trips.as_ref().unwrap();
        ctx.write_with("trips.csv", |w| write_trips_csv(w, trips))?;
    }
    grid_cmd(ctx, data)?;
    features_cmd(ctx, data)?;
    run_stage("forecast", forecast_cmd(ctx, data, EventKind::Pickup))?;
    if data.src.census.is_some() && data.src.area.is_some() {
        run_stage("regress", regress_cmd(ctx, data))?;
    }
    if data.src.snapshots.is_some()
        && run_stage("cluster", cluster_cmd(ctx, data))? {
            let path = ctx.out.join("cluster_assignment.csv");
            run_stage("joincount", joincount_cmd(ctx, &path))?;
        }
    let source_ok = match ctx.cfg.placement.source {
        PresenceSource::Snapshots => data.src.snapshots.is_some(),
        PresenceSource::Trips => true,
    };
    if source_ok {
        run_stage("service-areas", service_cmd(ctx, data))?;
    }
    Ok(())
}

/// Data-dependent stage failures are reported and skipped inside `report`.
fn run_stage(name: &str, r: Result<()>) -> Result<bool> {
    match r {
        Ok(()) => Ok(true),
        Err(e)
            if e.downcast_ref::<ffcs_core::Error>()
                .is_some_and(|c| !matches!(c, ffcs_core::Error::Io { .. })) =>
        {
            log::warn!("{name} skipped: {e:#}");
            Ok(false)
        }
        Err(e) if e.downcast_ref::<InputError>().is_some() => {
            log::warn!("{name} skipped: {e:#}");
            Ok(false)
        }
        Err(e) => Err(e),
    }
}
