use apce_core::embed::{EmbeddingStore, HashEmbedder};
use apce_core::model::{Model, ModelConfig};
use apce_core::select::score_chunks;
use apce_core::textpipe::chunk;
use apce_core::Execution;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn tokens(n: usize) -> Vec<u32> {
    (0..n as u32)
        .map(|i| i.wrapping_mul(2_654_435_761) % 32_768)
        .collect()
}

fn embedding_store(c: &mut Criterion) {
    let chunks = chunk(&tokens(64 * 800), 800).unwrap();
    let provider = HashEmbedder::new(384).unwrap();
    let mut group = c.benchmark_group("embedding_store");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| EmbeddingStore::build(&provider, &chunks, exec).unwrap())
        });
    }
    group.finish();
}

fn scoring(c: &mut Criterion) {
    let chunks = chunk(&tokens(512 * 64), 64).unwrap();
    let provider = HashEmbedder::new(384).unwrap();
    let store = EmbeddingStore::build(&provider, &chunks, Execution::Parallel).unwrap();
    let query = store.get(7).unwrap().clone();
    let mut group = c.benchmark_group("score_chunks");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| score_chunks(&query, &store, None, exec).unwrap())
        });
    }
    group.finish();
}

fn prefill(c: &mut Criterion) {
    let model = Model::new(ModelConfig {
        n_layers: 2,
        ..ModelConfig::default()
    })
    .unwrap();
    let chunks = chunk(&tokens(512), 64).unwrap();
    let mut group = c.benchmark_group("dense_prefill");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let mut cache = model.new_cache();
                model.dense_prefill(&mut cache, &chunks, exec).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, embedding_store, scoring, prefill);
criterion_main!(benches);
