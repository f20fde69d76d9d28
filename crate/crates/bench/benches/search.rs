use std::hint::black_box;

use cbir_core::{build_index, DescriptorIndex, IndexEntry, RepresentativeMode};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIM: usize = 1024;

fn vector(rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..DIM).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

fn index(rng: &mut ChaCha8Rng, classes: u32, per_class: usize) -> DescriptorIndex {
    let mut entries = Vec::new();
    for c in 0..classes {
        for i in 0..per_class {
            entries.push(IndexEntry::new(format!("c{c}_{i}"), c, vector(rng)));
        }
    }
    build_index(entries, RepresentativeMode::Mean).unwrap()
}

fn search(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let q = vector(&mut rng);
    let mut group = c.benchmark_group("search");
    for &classes in &[200u32, 1000] {
        let idx = index(&mut rng, classes, 10);
        group.bench_with_input(BenchmarkId::new("query_classes_k10", classes), &idx, |b, idx| {
            b.iter(|| idx.query_classes(black_box(&q), 10).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("two_stage_m5_k10", classes), &idx, |b, idx| {
            b.iter(|| idx.query_two_stage(black_box(&q), 5, 10).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, search);
criterion_main!(benches);
