use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use dmu_bench::{random_sequence, single_layer};
use dmu_core::backprop::forward_cache_sequence;
use dmu_core::cells::{dmu_step, reset_state};
use dmu_core::{CellKind, CellParams, DecodeMode, DmuConfig, SeededRng, Target};
use std::hint::black_box;

fn step(c: &mut Criterion) {
    let mut group = c.benchmark_group("dmu_step");
    for n in [0, 10, 40] {
        let cfg = DmuConfig::new(40, 64, n);
        let params = CellParams::kaiming(&cfg, &mut SeededRng::new(1));
        let xs = random_sequence(2, 40, 64);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                let mut state = reset_state(&cfg);
                for x in &xs {
                    black_box(dmu_step(&params, &cfg, &mut state, x).unwrap());
                }
            })
        });
    }
    group.finish();
}

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_t100");
    group.throughput(Throughput::Elements(100));
    let xs = random_sequence(3, 40, 100);
    for (kind, n) in [
        (CellKind::Rnn, 0),
        (CellKind::Dmu, 20),
        (CellKind::Lstm, 0),
        (CellKind::DmuLstm, 20),
    ] {
        let net = single_layer(kind, 40, 64, n, 10);
        let layer = &net.layers[0];
        group.bench_function(format!("{kind:?}"), |b| {
            b.iter(|| black_box(forward_cache_sequence(&layer.params, &layer.cfg, &xs).unwrap()))
        });
    }
    group.finish();
}

fn backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("loss_and_gradient_t100");
    let xs = random_sequence(4, 40, 100);
    for (kind, n) in [(CellKind::Rnn, 0), (CellKind::Dmu, 20), (CellKind::DmuGru, 20)] {
        let net = single_layer(kind, 40, 64, n, 10);
        group.bench_function(format!("{kind:?}"), |b| {
            b.iter(|| black_box(net.loss_and_gradient(&xs, &Target::Class(3), DecodeMode::All).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, step, forward, backward);
criterion_main!(benches);
