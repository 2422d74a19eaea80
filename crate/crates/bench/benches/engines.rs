use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use yieldpaint::dae::{build_dataset, train, DaeArchitecture, TrainConfig};
use yieldpaint::tps::tps_inpaint;
use yieldpaint::tv::tv_inpaint;
use yieldpaint::TvConfig;
use yieldpaint_bench::{block_075, surfaces, uniform_075};

fn tps(c: &mut Criterion) {
    let mut group = c.benchmark_group("tps_inpaint");
    for (name, m) in [("uniform", uniform_075()), ("block", block_075())] {
        for lambda in [0.0, 1e-3] {
            group.bench_with_input(BenchmarkId::new(name, lambda), &m, |b, m| {
                b.iter(|| tps_inpaint(black_box(m), lambda).unwrap())
            });
        }
    }
    group.finish();
}

fn tv(c: &mut Criterion) {
    let mut group = c.benchmark_group("tv_inpaint");
    group.sample_size(20);
    let cfg = TvConfig::default().with_lambda(1e-3);
    for (name, m) in [("uniform", uniform_075()), ("block", block_075())] {
        group.bench_with_input(BenchmarkId::from_parameter(name), &m, |b, m| {
            b.iter(|| tv_inpaint(black_box(m), &cfg).unwrap())
        });
    }
    group.finish();
}

fn dae_inference(c: &mut Criterion) {
    let data = surfaces(20);
    let cfg = TrainConfig {
        epochs: 1,
        replicas: 1,
        ..Default::default()
    };
    let mut group = c.benchmark_group("dae_reconstruct");
    for arch in [
        DaeArchitecture::default(),
        DaeArchitecture::default_cnn(),
        DaeArchitecture::default_cnn_pe(),
    ] {
        let ds = build_dataset(&data, &cfg, &arch).unwrap();
        let model = train(&ds, &cfg).unwrap();
        let inputs: Vec<_> = ds.pairs.test.iter().map(|p| &p.masked).collect();
        group.bench_function(arch.name(), |b| {
            b.iter(|| model.reconstruct_scaled(black_box(&inputs)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, tps, tv, dae_inference);
criterion_main!(benches);
