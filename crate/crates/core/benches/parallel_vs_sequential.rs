//! Data-parallel kernels on a one-thread pool versus the default pool.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rayon::ThreadPoolBuilder;

use taxgraph::ingest::build_graph;
use taxgraph::linking::{
    link_companies, parse_postal_spec, CityCandidate, CityCandidateIndex, MAX_DISTANCE,
};
use taxgraph::model::EdgeKind;
use taxgraph::patterns::{detect_double_irish, DoubleIrishParams};
use taxgraph::synth::{generate, SynthParams};
use taxgraph::traversal::{chain_histogram, closure_child_stats, ultimate_discrepancies};
use taxgraph::GraphStore;

fn graph() -> GraphStore {
    let params = SynthParams {
        companies: 100_000,
        direct_edges: 12_000,
        ultimate_edges: 8_000,
        seed: 11,
    };
    build_graph(generate(&params)).0
}

fn candidates() -> CityCandidateIndex {
    let countries = ["US", "DE", "GB", "FR", "NL", "IE", "KY", "CN"];
    let mut entries = Vec::new();
    for (ci, c) in countries.iter().enumerate() {
        for city in 0..25u32 {
            entries.push(CityCandidate {
                external_id: format!("Q{}", 1000 + ci as u32 * 100 + city),
                city_name: format!("{c} City {city}"),
                postal: parse_postal_spec(&format!("{:05}-{:05}", city * 100, city * 100 + 99)),
            });
        }
    }
    CityCandidateIndex::new(entries)
}

fn kernels(c: &mut Criterion) {
    let store = graph();
    let index = candidates();
    let pools = [
        (
            "sequential",
            ThreadPoolBuilder::new().num_threads(1).build().unwrap(),
        ),
        ("parallel", ThreadPoolBuilder::new().build().unwrap()),
    ];
    let mut group = c.benchmark_group("kernels");
    group.sample_size(10);
    for (name, pool) in &pools {
        group.bench_with_input(
            BenchmarkId::new("closure_child_stats", name),
            pool,
            |b, pool| {
                b.iter(|| {
                    pool.install(|| {
                        black_box(closure_child_stats(&store, EdgeKind::Direct, Some(10)))
                    })
                })
            },
        );
        group.bench_with_input(
            BenchmarkId::new("chain_histogram", name),
            pool,
            |b, pool| {
                b.iter(|| pool.install(|| black_box(chain_histogram(&store, EdgeKind::Direct))))
            },
        );
        group.bench_with_input(
            BenchmarkId::new("ultimate_discrepancies", name),
            pool,
            |b, pool| b.iter(|| pool.install(|| black_box(ultimate_discrepancies(&store)))),
        );
        group.bench_with_input(BenchmarkId::new("link_companies", name), pool, |b, pool| {
            b.iter(|| {
                pool.install(|| black_box(link_companies(store.companies(), &index, MAX_DISTANCE)))
            })
        });
        group.bench_with_input(BenchmarkId::new("double_irish", name), pool, |b, pool| {
            b.iter(|| {
                pool.install(|| {
                    black_box(detect_double_irish(&store, &DoubleIrishParams::relaxed()))
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
