//! Sequential vs data-parallel execution of the hot kernels.
//!
//! Build without default features to check that the `Parallel` arm falls back
//! to the sequential loops (both rows should then time the same).

use adaptcl::data::{synthetic_sequence, Shift};
use adaptcl::exec::Exec;
use adaptcl::metrics::accuracy;
use adaptcl::nn::builders::{build_lenet5, build_toy_cnn};
use adaptcl::tensor::{gemm_nn, Tensor};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const POLICIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn random(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn gemm(c: &mut Criterion) {
    let mut group = c.benchmark_group("gemm_nn");
    for size in [64usize, 256] {
        let a = random(size * size, 1);
        let b = random(size * size, 2);
        for (name, exec) in POLICIES {
            group.bench_with_input(BenchmarkId::new(name, size), &size, |bench, &s| {
                bench.iter(|| gemm_nn(exec, black_box(&a), black_box(&b), s, s, s))
            });
        }
    }
    group.finish();
}

fn lenet5_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("lenet5_infer_batch64");
    let x = Tensor::new(vec![64, 1, 32, 32], random(64 * 32 * 32, 3)).unwrap();
    for (name, exec) in POLICIES {
        let mut net = build_lenet5(5).unwrap();
        net.exec = exec;
        group.bench_function(name, |bench| bench.iter(|| net.infer(black_box(&x)).unwrap()));
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let mut group = c.benchmark_group("accuracy_toy_cnn");
    let seq = synthetic_sequence(1, 100, 10, Shift::Strong, 5).unwrap();
    let test = &seq.tasks[0].test;
    for (name, exec) in POLICIES {
        let mut net = build_toy_cnn(&[1, 8, 8], 10, 5).unwrap();
        net.exec = exec;
        group.bench_function(name, |bench| bench.iter(|| accuracy(&net, black_box(test)).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, gemm, lenet5_forward, evaluation);
criterion_main!(benches);
