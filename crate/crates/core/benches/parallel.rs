//! Sequential vs rayon execution of the per-iteration estimator and of a
//! replicate batch.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use yoasovi::driver::{self, Method, RunConfig};
use yoasovi::estimators::{self, rng_for};
use yoasovi::family::VariationalParams;
use yoasovi::harness;
use yoasovi::model::{simulate, GmmModel, GmmSpec};
use yoasovi::par::{self, Execution};
use yoasovi::sequences::{SequenceKind, SequenceSource};

fn model() -> GmmModel {
    let spec = GmmSpec::new(2, 2);
    let truth = harness::preset("sim-p2k2").unwrap();
    let data = simulate(&spec, &truth, harness::PRESET_N, 1, "sim-p2k2").unwrap();
    GmmModel::new(spec, data).unwrap()
}

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn estimate(c: &mut Criterion) {
    let model = model();
    let lambda = VariationalParams::init(&model, &mut rng_for(0, 1));
    let mut group = c.benchmark_group("estimate_s100");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            let mut src = SequenceSource::new(SequenceKind::PseudoRandom, lambda.dim(), 0).unwrap();
            b.iter(|| black_box(estimators::estimate(&lambda, &model, &mut src, 100, exec).unwrap()))
        });
    }
    group.finish();
}

fn replicates(c: &mut Criterion) {
    let model = model();
    let mut group = c.benchmark_group("qmcvi_replicates_x8");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par::map_range(exec, 8, |r| {
                    let cfg = RunConfig {
                        seed: r as u64,
                        learning_rate: 1e-5,
                        max_iters: 50,
                        exec: Execution::Sequential,
                        ..RunConfig::new(Method::Qmcvi)
                    };
                    driver::run(&cfg, &model).unwrap().summary.iterations
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, estimate, replicates);
criterion_main!(benches);
