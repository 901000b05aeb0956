use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use uniformid_core::attribute::{predict_attributes, train_attribute_net, AttributeTrainConfig, StemSet};
use uniformid_core::data::ingest::{decode_image, encode_png};
use uniformid_core::data::{generate_dataset, generate_school_registry, SyntheticConfig};
use uniformid_core::preprocess::Preprocessor;
use uniformid_core::search::{search, SearchQuery};
use uniformid_core::service::{preprocessor_for, PipelineConfig};
use uniformid_core::uniform::{predict_uniform, train_uniform, EmbeddingCache, FakeBackbone, TrainConfig};
use uniformid_core::{AttributeDistribution, ImageRecord};

fn small_dataset() -> (uniformid_core::SchoolRegistry, Vec<ImageRecord>) {
    let config = SyntheticConfig {
        num_schools: 4,
        uniform_images_per_school: 10,
        num_nonuniform_images: 20,
        ..SyntheticConfig::default()
    };
    let registry = generate_school_registry(&config).unwrap();
    let records = generate_dataset(&config, &registry).unwrap();
    (registry, records)
}

fn preprocessor() -> Preprocessor {
    preprocessor_for(&PipelineConfig::default()).unwrap()
}

fn search_benchmark(c: &mut Criterion) {
    let config = SyntheticConfig {
        num_schools: 80,
        ..SyntheticConfig::default()
    };
    let registry = generate_school_registry(&config).unwrap();
    let query = SearchQuery::new(AttributeDistribution::one_hot(&registry.schools[17].variants[0]));
    c.bench_function("search 80 schools", |b| b.iter(|| search(black_box(&registry), black_box(&query)).unwrap()));
}

fn preprocess_benchmark(c: &mut Criterion) {
    let (_, records) = small_dataset();
    let pre = preprocessor();
    let bytes = encode_png(&records[0].pixels, records[0].figure_box).unwrap();
    c.bench_function("decode png", |b| b.iter(|| decode_image(black_box(&bytes)).unwrap()));
    c.bench_function("crop and resize to 224", |b| b.iter(|| pre.model_input(black_box(&records[0])).unwrap()));
}

fn inference_benchmark(c: &mut Criterion) {
    let (_, records) = small_dataset();
    let pre = preprocessor();
    let examples: Vec<(&ImageRecord, bool)> = records.iter().map(|r| (r, r.uniform_flag().unwrap())).collect();
    let uniform = train_uniform(
        &examples,
        &pre,
        Arc::new(FakeBackbone::default()),
        &EmbeddingCache::new(),
        &TrainConfig::default(),
    )
    .unwrap();
    let config = AttributeTrainConfig {
        epochs: 1,
        ..AttributeTrainConfig::default()
    };
    let refs: Vec<&ImageRecord> = records.iter().collect();
    let stems = StemSet::from_records(&refs, &pre, config.pool).unwrap();
    let labels: Vec<_> = records.iter().map(|r| r.ground_truth.unwrap().label).collect();
    let attribute = train_attribute_net(&stems, &labels, &config).unwrap();
    let input = pre.model_input(&records[0]).unwrap();

    c.bench_function("uniform probability", |b| b.iter(|| predict_uniform(&uniform, black_box(&input))));
    c.bench_function("attribute distribution", |b| {
        b.iter(|| predict_attributes(&attribute, black_box(&input)))
    });
    c.bench_function("attribute training epoch (40 images)", |b| {
        b.iter_batched(
            || labels.clone(),
            |labels| train_attribute_net(&stems, &labels, &config).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, search_benchmark, preprocess_benchmark, inference_benchmark);
criterion_main!(benches);
