use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::memory::GenderTag;

const DEFAULT_LEXICON: &str = include_str!("../../data/lexicon_en.tsv");

/// Word to gender tag mapping. Words are stored lowercased; anything not
/// listed is no-gender.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GenderLexicon {
    tags: HashMap<String, GenderTag>,
}

impl GenderLexicon {
    /// The small English list shipped with the crate.
    pub fn default_english() -> Self {
        Self::parse(DEFAULT_LEXICON).expect("bundled lexicon is well formed")
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, GenderTag)>) -> Result<Self> {
        let mut lex = GenderLexicon::default();
        for (word, tag) in pairs {
            lex.insert(word, tag)?;
        }
        Ok(lex)
    }

    /// `word<TAB>tag` lines, tag in {0, 1, 2}; blank and `#` lines ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lex = GenderLexicon::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (word, code) = line.split_once('\t').ok_or_else(|| {
                Error::Config(format!("lexicon line {}: expected word<TAB>tag", n + 1))
            })?;
            let tag = code
                .trim()
                .parse::<u8>()
                .ok()
                .and_then(GenderTag::from_code)
                .ok_or_else(|| {
                    Error::Config(format!("lexicon line {}: bad tag {code:?}", n + 1))
                })?;
            lex.insert(word.trim(), tag)?;
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read lexicon {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    fn insert(&mut self, word: &str, tag: GenderTag) -> Result<()> {
        let word = word.to_lowercase();
        match self.tags.get(&word) {
            Some(&old) if old != tag => Err(Error::Config(format!(
                "lexicon maps {word:?} to both {old} and {tag}"
            ))),
            _ => {
                self.tags.insert(word, tag);
                Ok(())
            }
        }
    }

    pub fn tag(&self, word: &str) -> GenderTag {
        self.tags
            .get(word)
            .or_else(|| self.tags.get(&word.to_lowercase()))
            .copied()
            .unwrap_or(GenderTag::NoGender)
    }

    /// Words explicitly listed with `tag`, sorted.
    pub fn words_with(&self, tag: GenderTag) -> Vec<&str> {
        let mut words: Vec<&str> = self
            .tags
            .iter()
            .filter(|(_, &t)| t == tag)
            .map(|(w, _)| w.as_str())
            .collect();
        words.sort_unstable();
        words
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}
