use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array3;
use vitatlas::agreement::{bootstrap_ci, cohens_kappa, fleiss_kappa, krippendorff_alpha, PairStatistic, UncertainMode};
use vitatlas::atlas::{embed_2d, Reducer, TsneConfig};
use vitatlas::featvis::{FourierImageParam, FourierRenderer};
use vitatlas::surrogate::{cosine_distance, lpips, lpips_features, RandomConvExtractor};
use vitatlas_bench::{noisy_annotations, random_feature_layers, random_image, random_vectors};

fn fourier(c: &mut Criterion) {
    let mut group = c.benchmark_group("fourier");
    for size in [32usize, 64, 224] {
        let renderer = FourierRenderer::new(size, size);
        let param = FourierImageParam::random(size, size, 1.0, 0.01, 0).unwrap();
        let image = renderer.render(&param).unwrap();
        let grad = Array3::from_elem((size, size, 3), 1e-3);
        group.bench_with_input(BenchmarkId::new("render", size), &size, |b, _| {
            b.iter(|| renderer.render(black_box(&param)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("pullback", size), &size, |b, _| {
            b.iter(|| renderer.pullback(black_box(&param), &image, &grad).unwrap())
        });
    }
    group.finish();
}

fn embedding(c: &mut Criterion) {
    let mut group = c.benchmark_group("embed_2d");
    group.sample_size(10);
    for n in [200usize, 500] {
        let vectors = random_vectors(n, 64, 1);
        let tsne = Reducer::Tsne(TsneConfig {
            iterations: 250,
            ..TsneConfig::default()
        });
        group.bench_with_input(BenchmarkId::new("tsne", n), &n, |b, _| {
            b.iter(|| embed_2d(black_box(&vectors), &tsne, 0).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("pca", n), &n, |b, _| {
            b.iter(|| embed_2d(black_box(&vectors), &Reducer::Pca, 0).unwrap())
        });
    }
    group.finish();
}

fn agreement(c: &mut Criterion) {
    let m = noisy_annotations(400, 5, 9, 0.7, 2);
    let mut group = c.benchmark_group("agreement");
    group.bench_function("fleiss_400x5", |b| {
        b.iter(|| fleiss_kappa(black_box(&m), UncertainMode::Exclude).unwrap())
    });
    group.bench_function("alpha_400x5", |b| {
        b.iter(|| krippendorff_alpha(black_box(&m), UncertainMode::Exclude).unwrap())
    });
    let (a, r) = (m.column(0), m.column(1));
    group.bench_function("cohen_400", |b| b.iter(|| cohens_kappa(black_box(&a), &r).unwrap()));
    group.sample_size(10);
    group.bench_function("bootstrap_300", |b| {
        b.iter(|| bootstrap_ci(black_box(&a), &r, PairStatistic::CohensKappa, 300, 0).unwrap())
    });
    group.finish();
}

fn perceptual(c: &mut Criterion) {
    let a = random_feature_layers(6, 17, 64, 3);
    let b_layers = random_feature_layers(6, 17, 64, 4);
    let v = random_vectors(2, 768, 5);
    let (x, y) = (random_image(32, 0), random_image(32, 1));
    let extractor = RandomConvExtractor::new(&[16, 32, 64], 0).unwrap();
    let mut group = c.benchmark_group("distances");
    group.bench_function("lpips_random_conv_32px", |b| {
        b.iter(|| lpips(black_box(&x), &y, &extractor, None).unwrap())
    });
    group.bench_function("lpips_6x17x64", |b| {
        b.iter(|| lpips_features(black_box(&a), &b_layers, None).unwrap())
    });
    group.bench_function("cosine_768", |b| b.iter(|| cosine_distance(black_box(&v[0]), &v[1]).unwrap()));
    group.finish();
}

criterion_group!(benches, fourier, embedding, agreement, perceptual);
criterion_main!(benches);
