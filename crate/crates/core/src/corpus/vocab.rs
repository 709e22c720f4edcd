use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{AnnotatedSentence, AnnotatedSequence};
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
/// Number of reserved ids ahead of the first word.
pub const RESERVED: usize = 4;

const SPECIAL: [&str; RESERVED] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Frequency-capped word list. Ids `0..4` are PAD, BOS, EOS, UNK; retained
/// words follow in decreasing frequency, ties in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    /// Keeps the `max_size - 4` most frequent words.
    pub fn build<'a, I, S>(sentences: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        if max_size < RESERVED + 1 {
            return Err(Error::Config(format!(
                "vocabulary size must be at least {}, got {max_size}",
                RESERVED + 1
            )));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for sentence in sentences {
            for tok in sentence {
                *counts.entry(tok.as_ref()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(w, _)| !SPECIAL.contains(w))
            .collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(max_size - RESERVED);
        Ok(Self::from_words(ranked.into_iter().map(|(w, _)| w.to_owned()).collect()))
    }

    fn from_words(words: Vec<String>) -> Self {
        let mut all: Vec<String> = SPECIAL.iter().map(|s| s.to_string()).collect();
        all.extend(words);
        let ids = all
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Vocabulary { words: all, ids }
    }

    /// Total size including the reserved ids.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> u32 {
        self.ids.get(word).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.ids.get(word).is_some_and(|&i| i as usize >= RESERVED)
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    /// Retained words in id order (without the reserved entries).
    pub fn words(&self) -> &[String] {
        &self.words[RESERVED..]
    }

    pub fn encode(&self, sentence: &AnnotatedSentence) -> AnnotatedSequence {
        AnnotatedSequence {
            ids: sentence.tokens.iter().map(|t| self.id(t)).collect(),
            tags: sentence.tags.clone(),
        }
    }

    /// One word per line; line `n` (from 0) is id `n + 4`.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for w in self.words() {
            out.push_str(w);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        let mut words = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let w = line.trim_end_matches('\r');
            if w.is_empty() || SPECIAL.contains(&w) || !seen.insert(w) {
                return Err(Error::Data(format!(
                    "vocabulary line {}: empty, reserved or duplicate word {w:?}",
                    n + 1
                )));
            }
            words.push(w.to_owned());
        }
        Ok(Self::from_words(words))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// SHA-256 of the vocabulary file contents.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_file_string().as_bytes()).into()
    }
}
