use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use lce_core::par;
use lce_core::tensor::ops::Padding;
use lce_core::tensor::Tape;
use lce_core::Tensor;

fn noise(shape: &[usize], seed: u32) -> Tensor<f32> {
    let mut s = seed.wrapping_mul(2654435761).max(1);
    Tensor::from_fn(shape, |_| {
        s ^= s << 13;
        s ^= s >> 17;
        s ^= s << 5;
        (s as f32 / u32::MAX as f32) - 0.5
    })
}

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d_3x3");
    let x = noise(&[4, 32, 64, 64], 1);
    let w = noise(&[32, 32, 3, 3], 2);
    let run = || {
        let tape = Tape::<f32>::no_grad();
        let y = tape.constant(x.clone()).conv2d(tape.constant(w.clone()), None, 1, Padding::Reflect(1));
        black_box(y.unwrap().value());
    };
    g.bench_function(BenchmarkId::new("parallel", "4x32x64x64"), |b| b.iter(run));
    g.bench_function(BenchmarkId::new("sequential", "4x32x64x64"), |b| b.iter(|| par::sequential(run)));
    g.finish();
}

fn spectral(c: &mut Criterion) {
    let mut g = c.benchmark_group("rfft2_roundtrip");
    let x = noise(&[8, 32, 64, 64], 3);
    let run = || {
        let tape = Tape::<f32>::no_grad();
        let y = tape.constant(x.clone()).rfft2().and_then(|s| s.irfft2(64));
        black_box(y.unwrap().value());
    };
    g.bench_function(BenchmarkId::new("parallel", "8x32x64x64"), |b| b.iter(run));
    g.bench_function(BenchmarkId::new("sequential", "8x32x64x64"), |b| b.iter(|| par::sequential(run)));
    g.finish();
}

criterion_group!(benches, conv, spectral);
criterion_main!(benches);
