use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mdis_bench::{hmt_tree, start_params, textured_image};
use mdis_core::hmt::{em_train, em_train_vector, universal_params, upward_downward, EmConfig, UniversalSource};
use mdis_core::{compute_saliency, dwt2d, Flavor, MdisConfig, Model, ScaleSelect, Wavelet};

fn transform(c: &mut Criterion) {
    let mut group = c.benchmark_group("dwt2d");
    for side in [256, 512] {
        let img = textured_image(side, 1);
        group.bench_with_input(BenchmarkId::new("haar", side), &img, |b, img| {
            b.iter(|| dwt2d(black_box(img), 5, Wavelet::Haar).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("db4", side), &img, |b, img| {
            b.iter(|| dwt2d(black_box(img), 5, Wavelet::Db4).unwrap())
        });
    }
    group.finish();
}

fn inference(c: &mut Criterion) {
    let tree = hmt_tree(256, 5, 2);
    let mut group = c.benchmark_group("upward_downward");
    for flavor in [Flavor::Thmt, Flavor::Vhmt] {
        let params = start_params(&tree, flavor);
        group.bench_function(flavor.to_string(), |b| b.iter(|| upward_downward(black_box(&tree), &params).unwrap()));
    }
    group.finish();
}

fn training(c: &mut Criterion) {
    let tree = hmt_tree(256, 5, 3);
    let config = EmConfig { max_iter: 10, rel_tol: 0.0 };
    let mut group = c.benchmark_group("em_10_iterations");
    group.sample_size(20);
    let scalar = start_params(&tree, Flavor::Thmt);
    group.bench_function("thmt", |b| b.iter(|| em_train(&tree, &scalar, &config).unwrap()));
    let vector = start_params(&tree, Flavor::Vhmt);
    group.bench_function("vhmt", |b| b.iter(|| em_train_vector(&tree, &vector, &config).unwrap()));
    group.finish();
}

fn full_pipeline(c: &mut Criterion) {
    let img = textured_image(256, 4);
    let universal = universal_params(UniversalSource::BuiltIn).unwrap();
    let config = MdisConfig::default();
    let mut group = c.benchmark_group("compute_saliency_256");
    group.sample_size(20);
    for flavor in [Flavor::Uhmt, Flavor::Thmt, Flavor::Vhmt] {
        let model = if flavor == Flavor::Uhmt { Model::Fixed(&universal) } else { Model::Train };
        group.bench_function(flavor.to_string(), |b| {
            b.iter(|| compute_saliency(black_box(&img), flavor, ScaleSelect::Integrated, model, &config).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, transform, inference, training, full_pipeline);
criterion_main!(benches);
