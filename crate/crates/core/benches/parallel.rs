use std::hint::black_box;

use allocatron_core::exec::ExecMode;
use allocatron_core::lab::{build_omega_matrix, construct_assignment, grid_matrix, GridSpec, IndexSets, Partition};
use allocatron_core::model::{random_input, NetworkConfig, StructuralExpansion, Theta};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DVector;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn grid_evaluation(c: &mut Criterion) {
    let mut group = c.benchmark_group("grid_matrix");
    let cfg = NetworkConfig::new(3, 5, 1, 4).unwrap();
    let v = build_omega_matrix(2, 3, 2.0).unwrap().v;
    let (lemma, theta) = construct_assignment(&v, &cfg).unwrap();

    let full_cfg = NetworkConfig::new(2, 4, 2, 6).unwrap();
    let full_theta = Theta::seeded(&full_cfg, 1).to_complex();
    let full = GridSpec {
        templates: (0..4)
            .map(|t| DVector::from_fn(4, |i, _| Complex64::new(((3 * t + i) as f64).cos(), 0.0)))
            .collect(),
        partition: Partition::contiguous(6),
        anchor: 0,
        index_sets: IndexSets::Full,
    };
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::new("lemma_4x4", name), &mode, |b, &mode| {
            b.iter(|| grid_matrix(&cfg, &theta, black_box(&lemma), 0, mode).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("full_64x64", name), &mode, |b, &mode| {
            b.iter(|| grid_matrix(&full_cfg, &full_theta, black_box(&full), 0, mode).unwrap())
        });
    }
    group.finish();
}

fn structural_form(c: &mut Criterion) {
    let mut group = c.benchmark_group("structural_form");
    group.sample_size(10);
    let cfg = NetworkConfig::new(3, 4, 2, 4).unwrap();
    let theta = Theta::seeded(&cfg, 2);
    let x = random_input(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
    let expansion = StructuralExpansion::new(&theta, &cfg).unwrap();
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::new("depth3_heads2", name), &mode, |b, &mode| {
            b.iter(|| expansion.evaluate(black_box(&x), mode).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, grid_evaluation, structural_form);
criterion_main!(benches);
