//! Text ingestion: tokenizer, gender lexicon, vocabulary, splits and the
//! synthetic biased-corpus generator.

mod lexicon;
mod synth;
mod vocab;

use std::path::Path;

pub use lexicon::GenderLexicon;
pub use synth::{generate_synthetic, SyntheticCorpus, SyntheticCorpusSpec, SyntheticSentence};
pub use vocab::{Vocabulary, BOS, EOS, PAD, RESERVED, UNK};

use crate::error::{Error, Result};
use crate::memory::GenderTag;
use crate::numerics::Rng;

/// Lowercases, splits on whitespace, and emits every character that is
/// neither alphanumeric nor whitespace as a token of its own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
            continue;
        }
        if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
        if !ch.is_whitespace() {
            tokens.push(ch.to_lowercase().collect());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Surface tokens with one gender tag each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedSentence {
    pub tokens: Vec<String>,
    pub tags: Vec<GenderTag>,
}

/// Vocabulary ids with one gender tag each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedSequence {
    pub ids: Vec<u32>,
    pub tags: Vec<GenderTag>,
}

impl AnnotatedSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub fn annotate(tokens: &[String], lexicon: &GenderLexicon) -> AnnotatedSentence {
    AnnotatedSentence {
        tokens: tokens.to_vec(),
        tags: tokens.iter().map(|t| lexicon.tag(t)).collect(),
    }
}

/// Sizes of a three-way split: validation and test get `floor(n * r)`,
/// training takes the remainder.
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must be in [0, 1] and sum to 1, got {ratios:?}"
        )));
    }
    let valid = (n as f64 * b + 1e-9).floor() as usize;
    let test = (n as f64 * c + 1e-9).floor() as usize;
    Ok((n - valid - test, valid, test))
}

/// Seeded shuffle, then contiguous train / validation / test slices.
pub fn split<T: Clone>(
    items: &[T],
    ratios: (f64, f64, f64),
    rng: &mut Rng,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (n_train, n_valid, _) = split_sizes(items.len(), ratios)?;
    let mut order: Vec<usize> = (0..items.len()).collect();
    rng.shuffle(&mut order);
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_valid]),
        pick(&order[n_train + n_valid..]),
    ))
}

/// One sentence per non-blank line.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

/// Tokenizes and annotates every line of a corpus.
pub fn annotate_lines(lines: &[String], lexicon: &GenderLexicon) -> Vec<AnnotatedSentence> {
    lines.iter().map(|l| annotate(&tokenize(l), lexicon)).collect()
}
