//! Sequential against rayon-parallel batch scoring of gold queries.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use retrocypher::graph::build_graph;
use retrocypher::ingest::synth::{generate, SynthConfig};
use retrocypher::par::{self, Mode};
use retrocypher::providers::LocalTrigramEmbedder;
use retrocypher::runner::evaluate;
use retrocypher::tasks::{generate_suite_with, SuiteCounts};

fn batch(c: &mut Criterion) {
    let g = build_graph(&generate(&SynthConfig::new(1000, 7))).unwrap();
    let suite = generate_suite_with(&g, &SuiteCounts::desk(), 7, Mode::default()).unwrap();
    let embedder = LocalTrigramEmbedder;

    let mut group = c.benchmark_group("evaluate_suite");
    group.sample_size(10);
    for (name, mode) in [("sequential", Mode::Sequential), ("parallel", Mode::Parallel(0))] {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| {
                par::map(&suite, mode, |inst| {
                    black_box(evaluate(&g, inst, Some(&inst.gold_cypher), Some(&embedder)))
                })
            })
        });
    }
    group.finish();

    let mut group = c.benchmark_group("generate_suite");
    group.sample_size(10);
    for (name, mode) in [("sequential", Mode::Sequential), ("parallel", Mode::Parallel(0))] {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| generate_suite_with(&g, &SuiteCounts::desk(), 7, mode).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, batch);
criterion_main!(benches);
