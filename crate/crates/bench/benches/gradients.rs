use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use saner_core::model::{self, Activation, ModelSpec};
use saner_core::noise;
use saner_core::optim::{self, Mode, OptimConfig};

fn setup(batch: usize) -> (ModelSpec, saner_core::ParamVector, saner_core::Batch) {
    let spec = ModelSpec::new(vec![32, 64, 10], Activation::Relu).unwrap();
    let params = model::init_params(&spec, 1);
    let ds = noise::make_gaussian_blobs(batch, 10, 32, 3.0, 1).unwrap();
    let ds = noise::inject_symmetric(&ds, 0.4, 1).unwrap();
    let idx: Vec<usize> = (0..batch).collect();
    let b = ds.batch(&idx).unwrap();
    (spec, params, b)
}

fn backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("backward");
    for batch in [32, 128, 512] {
        let (spec, params, b) = setup(batch);
        group.bench_with_input(BenchmarkId::from_parameter(batch), &batch, |bench, _| {
            bench.iter(|| model::backward(black_box(&params), &b, &spec).unwrap())
        });
    }
    group.finish();
}

fn step(c: &mut Criterion) {
    let (spec, params, b) = setup(128);
    let mut group = c.benchmark_group("step_gradient");
    for mode in [Mode::Sgd, Mode::Sam, Mode::Saner, Mode::SgdGrB] {
        let config = OptimConfig { mode, ..OptimConfig::default() };
        group.bench_function(mode.to_string(), |bench| {
            bench.iter(|| optim::step_gradient(black_box(&params), &b, &spec, &config, 0.5).unwrap())
        });
    }
    group.finish();
}

fn reweighting(c: &mut Criterion) {
    let (spec, params, b) = setup(128);
    let (g_sgd, g_sam) = optim::sam_gradient(&params, &b, &spec, 0.1).unwrap();
    c.bench_function("ratio_mask_combine", |bench| {
        bench.iter(|| {
            let ratio = optim::component_ratio(black_box(&g_sam), black_box(&g_sgd)).unwrap();
            let mask = optim::mask_b(&ratio);
            optim::saner_combine(&g_sam, &mask, 0.5)
        })
    });
    c.bench_function("split_gradient", |bench| {
        bench.iter(|| model::split_gradient(black_box(&params), &b, &spec).unwrap())
    });
}

criterion_group!(benches, backward, step, reweighting);
criterion_main!(benches);
