use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ldr_core::data::simulate;
use ldr_core::eval::c_index;
use ldr_core::gibbs::{sweep, GibbsState};
use ldr_core::interpret::isomap_embed;
use ldr_core::map::{grad_beta, LambdaDraws};
use ldr_core::model::GammaConvolutionSpec;
use ldr_core::{seeded, ChainConfig, Generator, LdrParams, SyntheticSpec};

fn gibbs_sweep(c: &mut Criterion) {
    let data = simulate(&SyntheticSpec::new(Generator::Data1, 800, 0), &mut seeded(0)).unwrap();
    let config = ChainConfig::fast();
    let mut rng = seeded(1);
    let state = GibbsState::initialize(&data, &config, &mut rng).unwrap();
    c.bench_function("gibbs_sweep_n800_k10", |b| {
        b.iter_batched(
            || state.clone(),
            |mut s| sweep(&mut s, data.records(), &config, &mut rng).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

fn series_cdf(c: &mut Criterion) {
    let spec = GammaConvolutionSpec::new(vec![0.7, 1.3, 2.1, 0.4], vec![0.5, 1.2, 2.5, 0.9]).unwrap();
    c.bench_function("series_build_and_cdf", |b| {
        b.iter(|| spec.series(1e-4).unwrap().cdf(black_box(1.3)))
    });
}

fn cindex(c: &mut Criterion) {
    let data = simulate(&SyntheticSpec::new(Generator::Data2, 2000, 0), &mut seeded(0))
        .unwrap()
        .fully_observed();
    let scores: Vec<f64> = (0..data.len()).map(|i| ((i * 7919) % 1000) as f64).collect();
    c.bench_function("c_index_n2000", |b| {
        b.iter(|| c_index(black_box(&scores), data.records(), 0).unwrap())
    });
}

fn map_gradient(c: &mut Criterion) {
    let p = LdrParams::new(
        3,
        vec![vec![1.0, 0.5, 2.0], vec![0.8, 1.2, 0.3]],
        vec![vec![vec![0.1, -0.2, 0.3, 0.0]; 3], vec![vec![-0.3, 0.1, 0.0, 0.2]; 3]],
    )
    .unwrap();
    let rec = ldr_core::ObservationRecord::observed(vec![1.0, 0.4, -1.1, 0.7], 0.9, 1).unwrap();
    let draws = LambdaDraws::sample(&p, 100, &mut seeded(2)).unwrap();
    c.bench_function("grad_beta_m100", |b| {
        b.iter(|| grad_beta(black_box(&rec), &p, &draws).unwrap())
    });
}

fn isomap(c: &mut Criterion) {
    let mut rng = seeded(3);
    let data = simulate(&SyntheticSpec::new(Generator::Data1, 300, 0), &mut rng).unwrap();
    let points: Vec<Vec<f64>> = data.records().iter().map(|r| r.covariates()[1..].to_vec()).collect();
    let mut group = c.benchmark_group("isomap");
    group.sample_size(10);
    group.bench_function("n300_k5", |b| b.iter(|| isomap_embed(black_box(&points), 5).unwrap()));
    group.finish();
}

criterion_group!(benches, gibbs_sweep, series_cdf, cindex, map_gradient, isomap);
criterion_main!(benches);
