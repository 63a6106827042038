use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use kilnwatch_bench::{clustered_detections, random_box};
use kilnwatch_core::obb::{merge_cross_tile, nms, obb_iou};
use kilnwatch_core::{Frame, NmsConfig};
use rand::SeedableRng;
use std::hint::black_box;

fn iou(c: &mut Criterion) {
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<_> = (0..1024)
        .map(|_| (random_box(&mut r, Frame::Pixel), random_box(&mut r, Frame::Pixel)))
        .collect();
    let mut g = c.benchmark_group("obb_iou");
    g.throughput(Throughput::Elements(pairs.len() as u64));
    g.bench_function("1024_pairs", |b| {
        b.iter(|| pairs.iter().map(|(a, b)| obb_iou(black_box(a), black_box(b))).sum::<f64>())
    });
    g.finish();
}

fn suppression(c: &mut Criterion) {
    let mut g = c.benchmark_group("nms");
    for n in [1_000, 10_000, 50_000] {
        let dets = clustered_detections(n, 3, 7);
        g.throughput(Throughput::Elements(n as u64));
        g.bench_with_input(BenchmarkId::new("class_agnostic", n), &dets, |b, d| {
            b.iter(|| nms(d, &NmsConfig::default()))
        });
        g.bench_with_input(BenchmarkId::new("merge_cross_tile", n), &dets, |b, d| {
            b.iter(|| merge_cross_tile(d, &NmsConfig::default()).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, iou, suppression);
criterion_main!(benches);
