use crate::corpus::{AnnotatedSequence, BOS, EOS};
use crate::error::{Error, Result};
use crate::memory::GenderTag;

/// How source/target pairs are formed from a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Framing {
    /// Each sentence is a target; its source is the preceding sentence of
    /// the same corpus (a lone BOS for the first one).
    #[default]
    History,
    /// Lines hold `source<TAB>target` explicitly.
    Paired,
}

/// One training pair. The target carries gender tags for memory writes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub source: Vec<u32>,
    pub target: AnnotatedSequence,
}

impl Example {
    pub fn new(source: Vec<u32>, target: AnnotatedSequence) -> Result<Self> {
        if target.ids.len() != target.tags.len() {
            return Err(Error::Data("target ids and tags differ in length".into()));
        }
        let source = if source.is_empty() { vec![BOS] } else { source };
        Ok(Example { source, target })
    }

    /// Decoder inputs under teacher forcing: BOS then the gold tokens.
    pub fn decoder_inputs(&self) -> Vec<u32> {
        let mut v = Vec::with_capacity(self.target.len() + 1);
        v.push(BOS);
        v.extend_from_slice(&self.target.ids);
        v
    }

    /// Gold outputs: the target tokens then EOS.
    pub fn decoder_outputs(&self) -> Vec<u32> {
        let mut v = self.target.ids.clone();
        v.push(EOS);
        v
    }

    pub fn output_tags(&self) -> Vec<GenderTag> {
        let mut v = self.target.tags.clone();
        v.push(GenderTag::NoGender);
        v
    }

    /// Number of predicted tokens (target plus EOS).
    pub fn token_count(&self) -> usize {
        self.target.len() + 1
    }
}

/// History framing over an ordered list of sentences.
pub fn examples_from_sequences(sequences: &[AnnotatedSequence]) -> Vec<Example> {
    sequences
        .iter()
        .enumerate()
        .map(|(i, s)| Example {
            source: match i.checked_sub(1).map(|p| &sequences[p].ids) {
                Some(prev) if !prev.is_empty() => prev.clone(),
                _ => vec![BOS],
            },
            target: s.clone(),
        })
        .collect()
}

/// Paired framing: explicit `(source, target)` sequences.
pub fn examples_from_pairs(pairs: &[(AnnotatedSequence, AnnotatedSequence)]) -> Result<Vec<Example>> {
    pairs
        .iter()
        .map(|(x, y)| Example::new(x.ids.clone(), y.clone()))
        .collect()
}

/// Consecutive chunks of at most `batch_size` examples, in the given order.
pub fn batches(examples: &[Example], batch_size: usize) -> Vec<&[Example]> {
    examples.chunks(batch_size.max(1)).collect()
}
