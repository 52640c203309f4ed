//! Chunked, out-of-order and recomputed K/V against from-scratch prefill.

use apce_core::embed::{Embedding, EmbeddingStore};
use apce_core::model::{Model, ModelConfig};
use apce_core::reprior::{
    apply_plan, reprioritize, ChunkBuffer, ModelKv, ReplacementPolicy, ReplacementStats,
};
use apce_core::textpipe::{chunk, Chunk};
use apce_core::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_model(seed: u64) -> Model {
    let cfg = ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 16,
        d_head: 8,
        d_kv_total: 8,
        vocab_size: 97,
        ..ModelConfig::default()
    }
    .with_seed(seed);
    Model::new(cfg).unwrap()
}

fn document(rng: &mut ChaCha8Rng, n_chunks: usize, m: usize) -> Vec<Chunk> {
    let toks: Vec<u32> = (0..n_chunks * m).map(|_| rng.gen_range(0..97)).collect();
    chunk(&toks, m).unwrap()
}

fn random_store(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> EmbeddingStore {
    let mut s = EmbeddingStore::new(dim);
    for i in 0..n {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        s.insert_chunk(i, Embedding::new(v).unwrap().normalized().unwrap())
            .unwrap();
    }
    s
}

fn fresh_prefill(model: &Model, chunks: &[Chunk], resident: &[usize]) -> apce_core::model::KvCache {
    let mut cache = model.new_cache();
    let picked: Vec<&Chunk> = resident.iter().map(|&i| &chunks[i]).collect();
    model
        .prefill(&mut cache, &picked, Execution::Sequential)
        .unwrap();
    cache
}

#[test]
fn all_chunks_prefill_equals_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = small_model(3);
    let chunks = document(&mut rng, 5, 7);
    let mut dense = model.new_cache();
    model
        .dense_prefill(&mut dense, &chunks, Execution::Parallel)
        .unwrap();
    let all: Vec<usize> = (0..chunks.len()).collect();
    let chunked = fresh_prefill(&model, &chunks, &all);
    assert!(dense.chunk_blocks_equal(&chunked));
}

#[test]
fn replacement_scenarios_keep_cache_sound() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut non_trivial = 0;
    for scenario in 0..60 {
        let n = rng.gen_range(3..8);
        let k = rng.gen_range(1..n);
        let m = rng.gen_range(2..6);
        let model = small_model(scenario);
        let chunks = document(&mut rng, n, m);
        let store = random_store(&mut rng, n, 6);

        let mut initial: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            initial.swap(i, rng.gen_range(0..=i));
        }
        initial.truncate(k);
        initial.sort_unstable();
        let mut buffer = ChunkBuffer::new(k).unwrap();
        buffer.admit_initial(&[], &initial).unwrap();
        let mut cache = fresh_prefill(&model, &chunks, &initial);
        let mut stats = ReplacementStats::default();

        for _ in 0..3 {
            let q: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let q = Embedding::new(q).unwrap();
            let plan = reprioritize(&buffer, &store, &q, None, Execution::Parallel).unwrap();
            let mut backend = ModelKv::new(&model, &mut cache, &chunks, Execution::Parallel);
            let applied = apply_plan(
                &mut buffer,
                &plan,
                &mut backend,
                &ReplacementPolicy::default(),
                &mut stats,
            )
            .unwrap();
            non_trivial += usize::from(applied);
            let resident = cache.resident_chunks();
            assert_eq!(resident, buffer.indices());
            let oracle = fresh_prefill(&model, &chunks, &resident);
            assert!(
                cache.chunk_blocks_equal(&oracle),
                "scenario {scenario}: cache diverged from fresh prefill of {resident:?}"
            );
        }
    }
    assert!(non_trivial >= 50, "only {non_trivial} plans applied");
}

#[test]
fn skipping_recompute_leaves_stale_blocks() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = small_model(5);
    let chunks = document(&mut rng, 4, 5);
    let mut cache = fresh_prefill(&model, &chunks, &[2, 3]);
    let mut buffer = ChunkBuffer::new(2).unwrap();
    buffer.admit_initial(&[], &[2, 3]).unwrap();
    let mut store = EmbeddingStore::new(4);
    for i in 0..4 {
        let mut v = vec![0.0; 4];
        v[i] = 1.0;
        store.insert_chunk(i, Embedding::new(v).unwrap()).unwrap();
    }
    let q = Embedding::new(vec![0.9, 0.0, 0.5, 0.1]).unwrap();
    let plan = reprioritize(&buffer, &store, &q, None, Execution::Sequential).unwrap();
    assert_eq!(plan.recompute, vec![2]);
    let policy = ReplacementPolicy {
        recompute: false,
        ..ReplacementPolicy::default()
    };
    let mut backend = ModelKv::new(&model, &mut cache, &chunks, Execution::Sequential);
    apply_plan(
        &mut buffer,
        &plan,
        &mut backend,
        &policy,
        &mut ReplacementStats::default(),
    )
    .unwrap();
    let oracle = fresh_prefill(&model, &chunks, &[0, 2]);
    assert!(!cache.chunk_blocks_equal(&oracle));
    let out = model
        .decode_step(&mut cache, 1, 20, Execution::Sequential)
        .unwrap();
    assert!(out.logits.iter().all(|l| l.is_finite()));
}
