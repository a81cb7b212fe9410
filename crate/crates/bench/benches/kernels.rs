use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use ffcs_bench::{forest_rows, sparse_design, walks};
use ffcs_core::clustering::{dtw_distance, pam, DistanceMatrix};
use ffcs_core::forecasting::{fit_random_forest, ForestConfig};
use ffcs_core::ingest::{infer_trips, TripParams};
use ffcs_core::lasso::{cv_select, fit_lasso_path, LassoConfig};
use ffcs_core::synth::{generate_city, CityScenario};

fn dtw(c: &mut Criterion) {
    let s = walks(2, 144, 1);
    let mut g = c.benchmark_group("dtw_144");
    for band in [12, 144] {
        g.bench_with_input(BenchmarkId::from_parameter(band), &band, |b, &band| {
            b.iter(|| dtw_distance(black_box(&s[0]), black_box(&s[1]), band).unwrap())
        });
    }
    g.finish();
}

fn pam_bench(c: &mut Criterion) {
    let s = walks(200, 1, 2);
    let d = DistanceMatrix::from_fn(s.len(), |i, j| (s[i][0] - s[j][0]).abs());
    c.bench_function("pam_200_k4", |b| b.iter(|| pam(black_box(&d), 4).unwrap()));
}

fn lasso(c: &mut Criterion) {
    let m = sparse_design(300, 40, 3);
    let cfg = LassoConfig::default();
    c.bench_function("lasso_path_300x40", |b| {
        b.iter(|| fit_lasso_path(black_box(&m), None, &cfg).unwrap())
    });
    let mut g = c.benchmark_group("lasso_cv");
    g.sample_size(10);
    g.bench_function("300x40_10fold", |b| {
        b.iter(|| cv_select(black_box(&m), &cfg, 7).unwrap())
    });
    g.finish();
}

fn forest(c: &mut Criterion) {
    let (x, y, groups) = forest_rows(1000, 5, 4);
    let cfg = ForestConfig {
        n_trees: 50,
        cv_trees: 10,
        ..Default::default()
    };
    let mut g = c.benchmark_group("forest");
    g.sample_size(10);
    g.bench_function("1000x5_50trees", |b| {
        b.iter(|| fit_random_forest(black_box(&x), &y, &groups, &cfg, 9).unwrap())
    });
    g.finish();
}

fn trips(c: &mut Criterion) {
    let sc = CityScenario {
        fleet_size: 40,
        days: 3,
        width_km: 2.0,
        height_km: 2.0,
        ..Default::default()
    };
    let city = generate_city(&sc).unwrap();
    let snaps = city.snapshots.expect("rendered");
    let params = TripParams::default();
    let mut g = c.benchmark_group("trips");
    g.sample_size(10);
    g.bench_function("infer_40_vehicles_3_days", |b| {
        b.iter(|| infer_trips(black_box(&snaps), &params))
    });
    g.finish();
}

criterion_group!(benches, dtw, pam_bench, lasso, forest, trips);
criterion_main!(benches);
