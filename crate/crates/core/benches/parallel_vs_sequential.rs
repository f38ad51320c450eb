use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fairquant::dataset::{generate_synthetic, SyntheticSpec};
use fairquant::diagnostics::{diagnostics_sweep, PowerIterationConfig};
use fairquant::nn::{gradient_with, hvp_exact};
use fairquant::quant::{quantize, PrecisionSpec};
use fairquant::{ClassWeights, Exec, Network, Rng};
use std::hint::black_box;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn setup() -> (Network, fairquant::dataset::GroupedDataset) {
    let (train, _) = generate_synthetic(&SyntheticSpec::benchmark(0)).unwrap();
    let net = Network::init(&[train.dim(), 64, 64, train.num_classes()], &mut Rng::new(0)).unwrap();
    (net, train)
}

fn gradients(c: &mut Criterion) {
    let (net, data) = setup();
    let v: Vec<f64> = {
        let mut rng = Rng::new(1);
        (0..net.param_count()).map(|_| rng.normal()).collect()
    };
    let w = ClassWeights::Uniform;
    let mut g = c.benchmark_group("full_batch");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new("gradient", name), &exec, |b, &e| {
            b.iter(|| gradient_with(e, black_box(&net), data.features(), data.labels(), &w).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("hvp_exact", name), &exec, |b, &e| {
            b.iter(|| hvp_exact(e, black_box(&net), data.features(), data.labels(), &w, &v).unwrap())
        });
    }
    g.finish();
}

fn sweep(c: &mut Criterion) {
    let (net, data) = setup();
    let models: Vec<_> = [PrecisionSpec::Float32, PrecisionSpec::Int(8), PrecisionSpec::Int(4), PrecisionSpec::Int(2)]
        .into_iter()
        .map(|p| quantize(&net, p).unwrap())
        .collect();
    let cfg = PowerIterationConfig {
        max_iters: 10,
        ..PowerIterationConfig::default()
    };
    let mut g = c.benchmark_group("diagnostics_sweep");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| diagnostics_sweep(&net, &models, &data, Some(0), &cfg, e).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, gradients, sweep);
criterion_main!(benches);
