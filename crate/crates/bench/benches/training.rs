use criterion::{criterion_group, criterion_main, Criterion};
use dmu_bench::single_layer;
use dmu_core::datasets::{gen_delayed_recall, gen_ecg_stream, DelayedRecallSpec, EcgSynthSpec};
use dmu_core::training::batch_gradient;
use dmu_core::{CellKind, DecodeMode};
use std::hint::black_box;

fn minibatch(c: &mut Criterion) {
    let spec = DelayedRecallSpec::new(8, 8, 20, 1).with_noise();
    let data = gen_delayed_recall(&spec, 32).unwrap();
    let indices: Vec<usize> = (0..32).collect();
    let mut group = c.benchmark_group("recall_batch32");
    for (kind, n) in [(CellKind::Rnn, 0), (CellKind::Dmu, 10)] {
        let net = single_layer(kind, spec.input_dim(), 64, n, 8);
        group.bench_function(format!("{kind:?}"), |b| {
            b.iter(|| black_box(batch_gradient(&net, &data, &indices, DecodeMode::Last).unwrap()))
        });
    }
    group.finish();
}

fn generators(c: &mut Criterion) {
    c.bench_function("gen_delayed_recall_1000", |b| {
        let spec = DelayedRecallSpec::new(8, 8, 20, 1).with_noise();
        b.iter(|| black_box(gen_delayed_recall(&spec, 1000).unwrap()))
    });
    c.bench_function("gen_ecg_100", |b| {
        let spec = EcgSynthSpec::with_seed(1);
        b.iter(|| black_box(gen_ecg_stream(&spec, 100).unwrap()))
    });
}

criterion_group!(benches, minibatch, generators);
criterion_main!(benches);
