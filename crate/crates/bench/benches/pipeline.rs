use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use fcot_bench::{feature_map, filter, sequence};
use fcot_core::backbone::crop_search_region;
use fcot_core::geometry::BBox;
use fcot_core::optim::steepest_descent;
use fcot_core::rmg::build_supervision;
use fcot_core::tensor::{correlate2d, prroi_pool, FilterShape, PaddingMode};
use fcot_core::{FeatureExtractor, LinearFilter, TrackState, TrackerConfig};

fn tensor_ops(c: &mut Criterion) {
    let map = feature_map(32, 72, 72, 4.0);
    let f = filter(FilterShape::new(4, 32, 3, 3));
    c.bench_function("correlate2d 32x72x72 by 4x32x3x3", |b| {
        b.iter(|| correlate2d(black_box(&map), black_box(&f), PaddingMode::SameZero).unwrap())
    });
    let roi = BBox::new(100.0, 90.0, 190.0, 170.0).unwrap();
    c.bench_function("prroi_pool 32ch 3x3", |b| b.iter(|| prroi_pool(black_box(&map), black_box(&roi), 3, 3, 2).unwrap()));
}

fn pipeline(c: &mut Criterion) {
    let cfg = TrackerConfig::default();
    let seq = sequence(3);
    let extractor = FeatureExtractor::new(cfg.backbone.clone()).unwrap();
    let (crop, _) = crop_search_region(&seq.frames[1], &seq.ground_truth[0], &cfg.backbone).unwrap();
    c.bench_function("crop search region", |b| {
        b.iter(|| crop_search_region(black_box(&seq.frames[1]), &seq.ground_truth[0], &cfg.backbone).unwrap())
    });
    c.bench_function("extract features", |b| b.iter(|| extractor.extract(black_box(&crop)).unwrap()));

    let state = TrackState::init(&seq.frames[0], &seq.ground_truth[0], &cfg).unwrap();
    let r = &cfg.rmg;
    let prob = build_supervision(state.first_frame_samples(), r.vicinity_radius, r.eta, r.kernel_size).unwrap();
    let zero = LinearFilter::zeros(state.static_model().shape());
    c.bench_function("steepest descent 10 steps", |b| b.iter(|| steepest_descent(black_box(&zero), &prob, 10).unwrap()));

    c.bench_function("track frame", |b| {
        b.iter_batched(|| state.clone(), |mut s| s.track_frame(&seq.frames[1]).unwrap(), BatchSize::LargeInput)
    });
    let mut g = c.benchmark_group("init");
    g.sample_size(10);
    g.bench_function("tracker init", |b| b.iter(|| TrackState::init(&seq.frames[0], &seq.ground_truth[0], &cfg).unwrap()));
    g.finish();
}

criterion_group!(benches, tensor_ops, pipeline);
criterion_main!(benches);
