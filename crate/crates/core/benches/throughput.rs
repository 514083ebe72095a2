//! Parallel vs sequential throughput of the two hot loops: the κ ranking over
//! a candidate pool and one full-batch loss gradient.
//!
//! With the default `parallel` feature each workload is timed on the global
//! rayon pool and on a one-thread pool. Build with `--no-default-features` to
//! time the plain sequential fallback.

use std::hint::black_box;
use std::path::PathBuf;

use criterion::{criterion_group, criterion_main, Criterion};

use tfi_core::config::load_spec;
use tfi_core::diffnet::{init_params, loss_and_grads, InitScheme, LossBatches, Normalization};
use tfi_core::inversion::{collocation_sets, observations, TrainConfig};
use tfi_core::placement::select_positions;
use tfi_core::sampling::{candidate_pool, lds_sample, PoolCounts};
use tfi_core::{assemble, solve_forward, DomainSpec};

fn reference() -> DomainSpec {
    load_spec(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference_case1.toml")).unwrap()
}

/// Runs `f` under every available execution mode.
fn modes(c: &mut Criterion, group: &str, mut f: impl FnMut() + Send) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    #[cfg(feature = "parallel")]
    {
        g.bench_function("parallel", |b| b.iter(&mut f));
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        g.bench_function("sequential", |b| one.install(|| b.iter(&mut f)));
    }
    #[cfg(not(feature = "parallel"))]
    g.bench_function("sequential", |b| b.iter(&mut f));
    g.finish();
}

fn ranking(c: &mut Criterion) {
    let spec = reference();
    let sys = assemble(&spec, 21).unwrap();
    let cands = candidate_pool(&spec, 42, PoolCounts { lhs: 8, lds: 8, gs: 8 }, 0).unwrap();
    modes(c, "select_positions_k21_24", || {
        black_box(select_positions(&cands, &sys, 1.0).unwrap());
    });
}

fn gradient(c: &mut Criterion) {
    let spec = reference();
    let cfg = TrainConfig::default();
    let truth = solve_forward(&assemble(&spec, 50).unwrap(), &spec.true_intensities()).unwrap();
    let ps = lds_sample(42, &spec).unwrap();
    let values: Vec<f64> = ps.points().iter().map(|p| truth.sample(p)).collect();
    let col = collocation_sets(&spec, &cfg, cfg.seed).unwrap();
    let batches = LossBatches {
        interior: col.interior,
        boundary: col.boundary,
        data: observations(&ps, &values).unwrap(),
    };
    let params = init_params(&cfg.widths, InitScheme::Xavier, 0).unwrap();
    let norm = Normalization::for_plate(spec.lx, spec.ly);
    let phi = spec.rated_intensities();
    modes(c, "loss_and_grads_default", || {
        black_box(loss_and_grads(&params, &norm, spec.conductivity, &phi, &batches, &cfg.weights()).unwrap());
    });
}

criterion_group!(benches, ranking, gradient);
criterion_main!(benches);
