//! Runs each data-parallel kernel on a one-thread pool and on the default
//! pool. Build with `--no-default-features` to bench the plain sequential
//! code path instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use palmsight_core::cluster::{boruvka_mst, core_distances};
use palmsight_core::geo::GeoPoint;
use palmsight_core::index::PointIndex;
use palmsight_core::score::{idw_report, IdwParams};
use palmsight_core::stats::{bootstrap_mean_ci, BootstrapParams};
use palmsight_core::synth::{generate, Parents, ThomasParams};

const ORIGIN: GeoPoint = GeoPoint { lon: -73.6, lat: 11.4 };

fn landscape(n_parents: usize, mu: f64) -> Vec<[f64; 2]> {
    generate(&ThomasParams {
        origin: ORIGIN,
        parents: Parents::Random {
            intensity_per_km2: n_parents as f64 / 400.0,
        },
        mean_offspring: mu,
        offspring_per_parent: None,
        sigma: 150.0,
        background_per_km2: 5.0,
        extent: [0.0, 0.0, 20_000.0, 20_000.0],
        seed: 42,
    })
    .expect("valid params")
    .points
    .iter()
    .map(|p| p.xy())
    .collect()
}

#[cfg(feature = "parallel")]
fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    let n = all.current_num_threads();
    vec![("1-thread".into(), one), (format!("{n}-threads"), all)]
}

fn run_modes<F: Fn() + Sync>(c: &mut Criterion, group: &str, f: F) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    #[cfg(feature = "parallel")]
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| pool.install(&f)));
    }
    #[cfg(not(feature = "parallel"))]
    g.bench_function(BenchmarkId::from_parameter("sequential"), |b| b.iter(&f));
    g.finish();
}

fn bench_clustering(c: &mut Criterion) {
    let pts = landscape(40, 800.0);
    let idx = PointIndex::from_xy(ORIGIN, pts).unwrap();
    run_modes(c, "core_distances", || {
        core_distances(&idx, 100).unwrap();
    });
    let core = core_distances(&idx, 100).unwrap();
    run_modes(c, "boruvka_mst", || {
        boruvka_mst(&idx, &core);
    });
}

fn bench_idw(c: &mut Criterion) {
    let pts = landscape(40, 800.0);
    let idx = PointIndex::from_xy(ORIGIN, pts.clone()).unwrap();
    let proj = palmsight_core::geo::Projection::new(ORIGIN);
    let centers: Vec<(String, GeoPoint)> = pts
        .iter()
        .step_by(10)
        .enumerate()
        .map(|(i, p)| (i.to_string(), proj.unproject(p[0], p[1])))
        .collect();
    run_modes(c, "idw_report", || {
        idw_report(&idx, &centers, &IdwParams::default()).unwrap();
    });
}

fn bench_bootstrap(c: &mut Criterion) {
    let values: Vec<f64> = (0..500).map(|i| ((i * 7919) % 1000) as f64 / 100.0).collect();
    let params = BootstrapParams {
        samples: 20_000,
        sample_size: 17,
        ci_level: 0.8,
        seed: 1,
    };
    run_modes(c, "bootstrap_mean_ci", || {
        bootstrap_mean_ci(&values, &params).unwrap();
    });
}

criterion_group!(benches, bench_clustering, bench_idw, bench_bootstrap);
criterion_main!(benches);
