//! Perplexity, bias scores and bias amplification reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::corpus::{GenderLexicon, Vocabulary};
use crate::error::{Error, Result};
use crate::memory::GenderTag;
use crate::model::{contextual_embeddings, fair_embedding, EmbeddingLookup, Example, Model};
use crate::numerics::{dot, norm};
use crate::parallel::{map_ordered, Execution};

/// Tolerance on `|v| = 1` for inputs that must be unit vectors.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Summed negative log-likelihood and the number of predicted tokens.
///
/// Both the training loss and perplexity are derived from this one type,
/// so `perplexity() == loss().exp()` holds bit for bit.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TokenNll {
    pub sum: f64,
    pub tokens: usize,
}

impl TokenNll {
    pub fn new(sum: f64, tokens: usize) -> Self {
        TokenNll { sum, tokens }
    }

    pub fn merge(&mut self, other: TokenNll) {
        self.sum += other.sum;
        self.tokens += other.tokens;
    }

    /// Token-mean NLL (NaN when no tokens were seen).
    pub fn mean(&self) -> f64 {
        self.sum / self.tokens as f64
    }

    pub fn loss(&self) -> Result<f64> {
        if self.tokens == 0 {
            return Err(Error::Domain("loss of an empty corpus".into()));
        }
        Ok(self.mean())
    }

    pub fn perplexity(&self) -> Result<f64> {
        Ok(self.loss()?.exp())
    }
}

/// `exp(loss)` for a token-mean loss.
pub fn perplexity_from_loss(loss: f64) -> f64 {
    loss.exp()
}

fn check_unit(name: &str, v: &[f64]) -> Result<()> {
    let n = norm(v);
    if (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::Contract(format!("{name} must be unit norm, got |{name}| = {n}")));
    }
    Ok(())
}

/// Share of the clamped similarity mass that goes to the first indicator:
/// `s_m / (s_m + s_w)` with `s = max(h . indicator, 0)`, or 0.5 when both
/// similarities are non-positive.
pub fn bias_score(h: &[f64], man: &[f64], woman: &[f64]) -> Result<f64> {
    if h.len() != man.len() || h.len() != woman.len() {
        return Err(Error::dim("bias_score", &[h.len()], &[man.len(), woman.len()]));
    }
    check_unit("h", h)?;
    check_unit("man", man)?;
    check_unit("woman", woman)?;
    let s_m = dot(h, man).max(0.0);
    let s_w = dot(h, woman).max(0.0);
    if s_m + s_w == 0.0 {
        return Ok(0.5);
    }
    Ok(s_m / (s_m + s_w))
}

/// The bias equation exactly as typeset in the source formulation:
/// `|h . man| / |(h . man) + (h . woman)|`, with norms of scalars read as
/// absolute values. Kept for auditing; it is not bounded to `[0, 1]` and
/// does not feed any report aggregate.
pub fn bias_score_literal(h: &[f64], man: &[f64], woman: &[f64]) -> Result<f64> {
    if h.len() != man.len() || h.len() != woman.len() {
        return Err(Error::dim("bias_score_literal", &[h.len()], &[man.len(), woman.len()]));
    }
    let a = dot(h, man);
    let denom = (a + dot(h, woman)).abs();
    if denom == 0.0 {
        return Ok(0.5);
    }
    Ok(a.abs() / denom)
}

/// `b_test - b_train`; positive means the association grew.
pub fn bias_amplification(b_test: f64, b_train: f64) -> f64 {
    b_test - b_train
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordBias {
    pub word: String,
    pub b_train: f64,
    pub b_test: f64,
    pub amplification: f64,
    /// Which split(s) had no occurrence of the word, so the embedding fell
    /// back to the context-free one.
    pub fallback: bool,
}

/// Per-word bias scores on two splits and their aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasReport {
    pub variant: String,
    pub seed: u64,
    pub records: Vec<WordBias>,
    /// Target words that were out of vocabulary and skipped.
    pub skipped: Vec<String>,
    /// Resolved configuration, `key = value` per entry.
    pub config: BTreeMap<String, String>,
}

impl BiasReport {
    /// Mean amplification over the recorded words; `None` for no words.
    pub fn aggregate(&self) -> Option<f64> {
        if self.records.is_empty() {
            return None;
        }
        Some(self.records.iter().map(|r| r.amplification).sum::<f64>() / self.records.len() as f64)
    }

    /// `word,b_train,b_test,amplification` rows plus a final aggregate row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("word,b_train,b_test,amplification\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{}", r.word, r.b_train, r.b_test, r.amplification);
        }
        match self.aggregate() {
            Some(a) => {
                let _ = writeln!(out, "aggregate,,,{a}");
            }
            None => out.push_str("aggregate,,,\n"),
        }
        out
    }
}

/// Perplexity of `model` over `examples` in evaluation mode.
pub fn perplexity(model: &Model, examples: &[Example], batch_size: usize, exec: Execution) -> Result<f64> {
    model.corpus_nll(examples, batch_size, exec)?.perplexity()
}

/// Every no-gender lexicon word that the vocabulary retains, sorted.
pub fn default_targets(lexicon: &GenderLexicon, vocab: &Vocabulary) -> Vec<String> {
    lexicon
        .words_with(GenderTag::NoGender)
        .into_iter()
        .filter(|w| vocab.contains(w))
        .map(str::to_owned)
        .collect()
}

/// Embeddings of one split: the mean head representation wherever the word
/// is the decoder input, or the context-free embedding if it never is.
struct SplitEmbeddings<'a> {
    model: &'a Model,
    lookup: EmbeddingLookup,
}

impl SplitEmbeddings<'_> {
    fn get(&self, word: u32) -> Result<(Vec<f64>, bool)> {
        match self.lookup.get(word) {
            Some(v) => Ok((v, false)),
            None => Ok((fair_embedding(self.model, word)?, true)),
        }
    }
}

/// Bias scores of `targets` as conditioned by the train and test splits,
/// and their differences. Indicator words must be in the vocabulary;
/// target words that are not are skipped and listed.
#[allow(clippy::too_many_arguments)]
pub fn aggregate_bias_report(
    model: &Model,
    train: &[Example],
    test: &[Example],
    vocab: &Vocabulary,
    targets: &[String],
    indicators: (&str, &str),
    batch_size: usize,
    exec: Execution,
) -> Result<BiasReport> {
    let indicator = |w: &str| {
        if vocab.contains(w) {
            Ok(vocab.id(w))
        } else {
            Err(Error::Config(format!("indicator word {w:?} is not in the vocabulary")))
        }
    };
    let (man, woman) = (indicator(indicators.0)?, indicator(indicators.1)?);
    let split = |ex: &[Example]| -> Result<SplitEmbeddings> {
        Ok(SplitEmbeddings {
            model,
            lookup: contextual_embeddings(model, ex, batch_size, exec)?,
        })
    };
    let (tr, te) = (split(train)?, split(test)?);
    let anchors = |s: &SplitEmbeddings| -> Result<(Vec<f64>, Vec<f64>)> { Ok((s.get(man)?.0, s.get(woman)?.0)) };
    let (tr_m, tr_w) = anchors(&tr)?;
    let (te_m, te_w) = anchors(&te)?;

    let (known, skipped): (Vec<&String>, Vec<&String>) = targets.iter().partition(|w| vocab.contains(w));
    let records = map_ordered(&known, exec, |w| -> Result<WordBias> {
        let id = vocab.id(w);
        let (h_tr, fb_tr) = tr.get(id)?;
        let (h_te, fb_te) = te.get(id)?;
        let b_train = bias_score(&h_tr, &tr_m, &tr_w)?;
        let b_test = bias_score(&h_te, &te_m, &te_w)?;
        Ok(WordBias {
            word: w.to_string(),
            b_train,
            b_test,
            amplification: bias_amplification(b_test, b_train),
            fallback: fb_tr || fb_te,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(BiasReport {
        variant: model.variant().name().to_string(),
        seed: 0,
        records,
        skipped: skipped.into_iter().cloned().collect(),
        config: BTreeMap::new(),
    })
}

/// One line of a variant comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantSummary {
    pub variant: String,
    pub perplexity: f64,
    pub amplification: Option<f64>,
}

/// Aligned plain-text table with one row per variant.
pub fn comparison_table(rows: &[VariantSummary]) -> String {
    let header = ["Model", "Perplexity", "Bias Amplification"];
    let cells: Vec<[String; 3]> = rows
        .iter()
        .map(|r| {
            [
                r.variant.clone(),
                format!("{:.2}", r.perplexity),
                r.amplification.map_or("n/a".into(), |a| format!("{a:+.3}")),
            ]
        })
        .collect();
    let mut width = header.map(str::len);
    for row in &cells {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, c: [&str; 3]| {
        let _ = writeln!(out, "{:<w0$}  {:>w1$}  {:>w2$}", c[0], c[1], c[2], w0 = width[0], w1 = width[1], w2 = width[2]);
    };
    line(&mut out, header);
    let _ = writeln!(out, "{}", "-".repeat(width.iter().sum::<usize>() + 4));
    for row in &cells {
        line(&mut out, [&row[0], &row[1], &row[2]]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_examples() {
        let e1 = [1.0, 0.0, 0.0];
        let e2 = [0.0, 1.0, 0.0];
        let e3 = [0.0, 0.0, 1.0];
        assert_eq!(bias_score(&e1, &e1, &e2).unwrap(), 1.0);
        assert_eq!(bias_score(&e3, &e1, &e2).unwrap(), 0.5);
        let s = 0.5f64.sqrt();
        assert_eq!(bias_score(&[s, s, 0.0], &e1, &e2).unwrap(), 0.5);
    }

    #[test]
    fn score_rejects_non_unit() {
        let e1 = [1.0, 0.0];
        assert!(matches!(bias_score(&[2.0, 0.0], &e1, &e1), Err(Error::Contract(_))));
    }

    #[test]
    fn amplification_examples() {
        assert!((bias_amplification(0.6, 0.5) - 0.1).abs() < 1e-15);
        assert_eq!(bias_amplification(0.5, 0.5), 0.0);
    }

    #[test]
    fn perplexity_identities() {
        let v = 18000usize;
        let nll = TokenNll::new(7.0 * (v as f64).ln(), 7);
        assert!((nll.perplexity().unwrap() / v as f64 - 1.0).abs() < 1e-9);
        assert_eq!(TokenNll::new(0.0, 3).perplexity().unwrap(), 1.0);
        assert!(matches!(TokenNll::default().perplexity(), Err(Error::Domain(_))));
    }

    #[test]
    fn empty_report_has_no_aggregate() {
        let r = BiasReport {
            variant: "seq2seq".into(),
            seed: 0,
            records: vec![],
            skipped: vec![],
            config: BTreeMap::new(),
        };
        assert_eq!(r.aggregate(), None);
        assert!(r.to_csv().ends_with("aggregate,,,\n"));
    }

    #[test]
    fn table_is_aligned() {
        let t = comparison_table(&[
            VariantSummary { variant: "Seq2Seq".into(), perplexity: 13.27, amplification: Some(0.18) },
            VariantSummary { variant: "Seq2Seq+FairRegion".into(), perplexity: 10.79, amplification: Some(0.09) },
        ]);
        let lens: Vec<usize> = t.lines().filter(|l| !l.starts_with('-')).map(str::len).collect();
        assert!(lens.windows(2).all(|w| w[0] == w[1]), "{t}");
    }
}
