#![allow(dead_code)]

use fairlm::corpus::{annotate_lines, generate_synthetic, SyntheticCorpusSpec, Vocabulary};
use fairlm::memory::{GenderTag, MemoryModule};
use fairlm::model::{examples_from_sequences, Example, Model, ModelConfig, Variant};
use fairlm::numerics::{init_uniform, Rng, Tensor};

/// Relative error `|a - b| / max(|a| + |b|, tiny)` over whole vectors.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

pub const FD_EPS: f64 = 1e-5;

/// Central difference of `f` at every coordinate in `coords` of `x`.
pub fn central_diff(x: &mut Tensor, coords: &[usize], mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    coords
        .iter()
        .map(|&i| {
            let orig = x.data()[i];
            x.data_mut()[i] = orig + FD_EPS;
            let up = f(x);
            x.data_mut()[i] = orig - FD_EPS;
            let down = f(x);
            x.data_mut()[i] = orig;
            (up - down) / (2.0 * FD_EPS)
        })
        .collect()
}

/// Up to `n` distinct coordinates of a tensor with `len` entries.
pub fn sample_coords(len: usize, n: usize, rng: &mut Rng) -> Vec<usize> {
    if len <= n {
        return (0..len).collect();
    }
    let mut all: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut all);
    all.truncate(n);
    all.sort_unstable();
    all
}

pub fn random(shape: &[usize], scale: f64, rng: &mut Rng) -> Tensor {
    init_uniform(shape, -scale, scale, rng).unwrap()
}

/// Memory of `m` random unit keys with round-robin tags.
pub fn random_memory(m: usize, d: usize, rng: &mut Rng) -> MemoryModule {
    let keys = Tensor::new(vec![m, d], (0..m * d).map(|_| rng.gaussian()).collect()).unwrap();
    let tags = (0..m).map(|i| GenderTag::REGION_ORDER[i % 3]).collect();
    MemoryModule::from_parts(keys, vec![3; m], tags).unwrap()
}

/// Tiny model configuration: vocab 20, d 8, fair_n 2.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        state_size: 8,
        memory_capacity: 24,
        fair_n: 2,
        init_scale: 0.3,
        ..ModelConfig::new(20)
    }
}

/// A batch of random examples over a vocabulary of `vocab` ids.
pub fn random_batch(vocab: u32, rows: usize, rng: &mut Rng) -> Vec<Example> {
    let tags = [GenderTag::NoGender, GenderTag::Male, GenderTag::Female];
    (0..rows)
        .map(|_| {
            let ls = 1 + rng.below(4);
            let lt = 1 + rng.below(4);
            let source = (0..ls).map(|_| 4 + rng.below(vocab as usize - 4) as u32).collect();
            let ids: Vec<u32> = (0..lt).map(|_| 4 + rng.below(vocab as usize - 4) as u32).collect();
            let t = ids.iter().map(|_| tags[rng.below(3)]).collect();
            Example::new(source, fairlm::corpus::AnnotatedSequence { ids, tags: t }).unwrap()
        })
        .collect()
}

pub struct SynthData {
    pub spec: SyntheticCorpusSpec,
    pub vocab: Vocabulary,
    pub examples: Vec<Example>,
}

/// Synthetic corpus encoded with its own vocabulary, history framing.
pub fn synthetic(p: f64, n: usize, seed: u64) -> SynthData {
    let spec = SyntheticCorpusSpec::with_bias(p, n, seed);
    let corpus = generate_synthetic(&spec).unwrap();
    let ann = annotate_lines(&corpus.lines(), &spec.lexicon());
    let vocab = Vocabulary::build(ann.iter().map(|a| a.tokens.as_slice()), 18000).unwrap();
    let seqs: Vec<_> = ann.iter().map(|a| vocab.encode(a)).collect();
    SynthData {
        spec,
        vocab,
        examples: examples_from_sequences(&seqs),
    }
}

pub fn tiny_model(variant: Variant, seed: u64) -> Model {
    Model::new(variant, tiny_config(), seed).unwrap()
}

pub mod gradcheck;

/// Exhaustive reference for `knn_gender`: filter by tag, sort by
/// decreasing similarity then index, keep `n`.
pub fn knn_oracle(mem: &MemoryModule, h: &[f64], n: usize, tag: GenderTag) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = Vec::new();
    for i in 0..mem.capacity() {
        if mem.tags()[i] != tag {
            continue;
        }
        let mut s = 0.0;
        for (a, b) in h.iter().zip(mem.key(i)) {
            s += a * b;
        }
        all.push((s, i));
    }
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    all.into_iter().take(n).map(|(_, i)| i).collect()
}

/// Uniform random unit vector.
pub fn unit_vector(d: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.gaussian()).collect();
        let n = fairlm::numerics::norm(&v);
        if n > 1e-6 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

/// Memory with random keys and random (not round-robin) tags that still
/// hold every class at least once.
pub fn random_tagged_memory(m: usize, d: usize, rng: &mut Rng) -> MemoryModule {
    let keys = Tensor::new(vec![m, d], (0..m * d).map(|_| rng.gaussian()).collect()).unwrap();
    let mut tags: Vec<GenderTag> = (0..m).map(|_| GenderTag::REGION_ORDER[rng.below(3)]).collect();
    for (i, t) in GenderTag::REGION_ORDER.iter().enumerate() {
        tags[i] = *t;
    }
    MemoryModule::from_parts(keys, vec![3; m], tags).unwrap()
}
