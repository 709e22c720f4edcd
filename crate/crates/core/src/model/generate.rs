//! Greedy generation and word embeddings read off the decoder.

use std::collections::BTreeMap;

use crate::corpus::{BOS, EOS};
use crate::error::Result;
use crate::numerics::argmax;
use crate::parallel::{map_ordered, Execution};

use super::forward::{unit, Collect, Graph};
use super::{batches, Example, Model};

/// Greedy decoding: encode `prompt`, feed BOS, then each argmax token,
/// until EOS (not included) or `max_len` tokens.
pub fn generate(model: &Model, prompt: &[u32], max_len: usize) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    if max_len == 0 {
        return Ok(out);
    }
    let prompt = if prompt.is_empty() { &[BOS][..] } else { prompt };
    let mut g = Graph::new(model, Execution::Sequential);
    let enc = g.encode(&[prompt])?;
    let (mut h, mut c) = g.start_state(&enc);
    let mut input = BOS;
    while out.len() < max_len {
        let step = g.step(&enc, &[input], h, c)?;
        let next = argmax(g.tape.value(step.logits).row(0)) as u32;
        if next == EOS {
            break;
        }
        out.push(next);
        input = next;
        h = step.h;
        c = step.c;
    }
    Ok(out)
}

/// Context-free embedding of one word: encode a lone BOS, run one decoder
/// step with `word` as input and return the unit-normalised head
/// representation (the Fair Region context for the memory variant, the
/// decoder output for the baselines).
pub fn fair_embedding(model: &Model, word: u32) -> Result<Vec<f64>> {
    let mut g = Graph::new(model, Execution::Sequential);
    let enc = g.encode(&[&[BOS]])?;
    let (h, c) = g.start_state(&enc);
    let step = g.step(&enc, &[word], h, c)?;
    Ok(unit(g.tape.value(step.embedding).row(0)))
}

/// Per-word head embeddings averaged over a corpus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingLookup {
    sums: BTreeMap<u32, (Vec<f64>, usize)>,
}

impl EmbeddingLookup {
    fn add(&mut self, word: u32, v: &[f64]) {
        let e = self.sums.entry(word).or_insert_with(|| (vec![0.0; v.len()], 0));
        e.0.iter_mut().zip(v).for_each(|(a, b)| *a += b);
        e.1 += 1;
    }

    fn merge(&mut self, other: EmbeddingLookup) {
        for (w, (v, n)) in other.sums {
            let e = self.sums.entry(w).or_insert_with(|| (vec![0.0; v.len()], 0));
            e.0.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
            e.1 += n;
        }
    }

    /// Unit-normalised mean embedding, if the word occurred.
    pub fn get(&self, word: u32) -> Option<Vec<f64>> {
        self.sums.get(&word).map(|(v, _)| unit(v))
    }

    pub fn occurrences(&self, word: u32) -> usize {
        self.sums.get(&word).map_or(0, |e| e.1)
    }

    pub fn len(&self) -> usize {
        self.sums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sums.is_empty()
    }
}

/// Teacher-forced evaluation pass over `examples` collecting, for every
/// decoder step whose input is a corpus token, the head embedding at that
/// step. Batches are reduced in corpus order, so the result does not
/// depend on `exec`.
pub fn contextual_embeddings(
    model: &Model,
    examples: &[Example],
    batch_size: usize,
    exec: Execution,
) -> Result<EmbeddingLookup> {
    let chunks = batches(examples, batch_size);
    let parts = map_ordered(&chunks, exec, |b| -> Result<EmbeddingLookup> {
        let mut g = Graph::new(model, Execution::Sequential);
        let out = g.teacher_forced(
            b,
            Collect {
                writes: false,
                embeddings: true,
            },
        )?;
        let mut lookup = EmbeddingLookup::default();
        for (w, v) in &out.embeddings {
            lookup.add(*w, v);
        }
        Ok(lookup)
    });
    let mut acc = EmbeddingLookup::default();
    for p in parts {
        acc.merge(p?);
    }
    Ok(acc)
}
