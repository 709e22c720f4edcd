//! Sequential versus rayon execution for the two data-parallel hot paths:
//! batched Fair Region queries and corpus perplexity.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fairlm::corpus::{annotate_lines, generate_synthetic, SyntheticCorpusSpec, Vocabulary, UNK};
use fairlm::memory::MemoryModule;
use fairlm::metrics::perplexity;
use fairlm::model::{examples_from_sequences, Model, ModelConfig, Variant};
use fairlm::numerics::{norm, Rng};
use fairlm::parallel::{map_ordered, Execution};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn fair_region_queries(c: &mut Criterion) {
    let mut rng = Rng::new(1);
    let mem = MemoryModule::init(1000, 256, 10, UNK, &mut rng).unwrap();
    let queries: Vec<Vec<f64>> = (0..256)
        .map(|_| {
            let v: Vec<f64> = (0..256).map(|_| rng.gaussian()).collect();
            let n = norm(&v);
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let mut g = c.benchmark_group("fair_region_256_queries");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| map_ordered(&queries, exec, |q| mem.fair_region(q, 10).unwrap().len()))
        });
    }
    g.finish();
}

fn corpus_perplexity(c: &mut Criterion) {
    let spec = SyntheticCorpusSpec::with_bias(0.9, 256, 2);
    let ann = annotate_lines(&generate_synthetic(&spec).unwrap().lines(), &spec.lexicon());
    let vocab = Vocabulary::build(ann.iter().map(|a| a.tokens.as_slice()), 18000).unwrap();
    let examples = examples_from_sequences(&ann.iter().map(|a| vocab.encode(a)).collect::<Vec<_>>());
    let cfg = ModelConfig {
        embed_dim: 64,
        state_size: 64,
        ..ModelConfig::new(vocab.len())
    };
    let model = Model::new(Variant::Seq2SeqFairRegion, cfg, 2).unwrap();
    let mut g = c.benchmark_group("perplexity_256_sentences");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| perplexity(&model, &examples, 32, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, fair_region_queries, corpus_perplexity);
criterion_main!(benches);
