use super::{annotate, tokenize, AnnotatedSentence, GenderLexicon};
use crate::error::{Error, Result};
use crate::memory::GenderTag;
use crate::numerics::Rng;

/// Recipe for a synthetic corpus with a known occupation/gender skew.
///
/// Templates contain `{occ}` (occupation) and `{g}` (gendered term). Each
/// sentence picks a template, an occupation and, with probability `bias`,
/// a male term (otherwise a female one), all uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpusSpec {
    pub occupations: Vec<String>,
    pub male_terms: Vec<String>,
    pub female_terms: Vec<String>,
    pub templates: Vec<String>,
    pub bias: f64,
    pub sentences: usize,
    pub seed: u64,
}

fn owned(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| w.to_string()).collect()
}

impl SyntheticCorpusSpec {
    /// English defaults: five occupations, five gendered nouns per side
    /// (including the indicator words "man" and "woman"), four templates.
    pub fn with_bias(bias: f64, sentences: usize, seed: u64) -> Self {
        SyntheticCorpusSpec {
            occupations: owned(&["doctor", "nurse", "engineer", "teacher", "scientist"]),
            male_terms: owned(&["man", "father", "brother", "husband", "son"]),
            female_terms: owned(&["woman", "mother", "sister", "wife", "daughter"]),
            templates: owned(&[
                "the {occ} is a {g} .",
                "my {g} works as a {occ} .",
                "the {g} became a {occ} last year .",
                "the {occ} , a {g} , arrived early .",
            ]),
            bias,
            sentences,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.bias) {
            return Err(Error::Config(format!(
                "bias ratio must lie in [0, 1], got {}",
                self.bias
            )));
        }
        if self.sentences == 0 {
            return Err(Error::Config("synthetic corpus needs at least one sentence".into()));
        }
        for (name, list) in [
            ("occupation", &self.occupations),
            ("male term", &self.male_terms),
            ("female term", &self.female_terms),
            ("template", &self.templates),
        ] {
            if list.is_empty() {
                return Err(Error::Config(format!("synthetic corpus has no {name}s")));
            }
        }
        if let Some(t) = self
            .templates
            .iter()
            .find(|t| !t.contains("{occ}") || !t.contains("{g}"))
        {
            return Err(Error::Config(format!(
                "template {t:?} must contain both {{occ}} and {{g}}"
            )));
        }
        Ok(())
    }

    /// Lexicon tagging the gendered terms; occupations are listed as
    /// no-gender so they form the default bias targets.
    pub fn lexicon(&self) -> GenderLexicon {
        let mut pairs: Vec<(&str, GenderTag)> = Vec::new();
        pairs.extend(self.male_terms.iter().map(|w| (w.as_str(), GenderTag::Male)));
        pairs.extend(self.female_terms.iter().map(|w| (w.as_str(), GenderTag::Female)));
        pairs.extend(self.occupations.iter().map(|w| (w.as_str(), GenderTag::NoGender)));
        GenderLexicon::from_pairs(pairs).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSentence {
    pub text: String,
    pub occupation: usize,
    pub gender: GenderTag,
    pub annotated: AnnotatedSentence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub sentences: Vec<SyntheticSentence>,
}

impl SyntheticCorpus {
    pub fn lines(&self) -> Vec<String> {
        self.sentences.iter().map(|s| s.text.clone()).collect()
    }

    /// `(male, female)` sentence counts per occupation.
    pub fn cooccurrence(&self, occupations: usize) -> Vec<(usize, usize)> {
        let mut counts = vec![(0, 0); occupations];
        for s in &self.sentences {
            match s.gender {
                GenderTag::Male => counts[s.occupation].0 += 1,
                GenderTag::Female => counts[s.occupation].1 += 1,
                GenderTag::NoGender => {}
            }
        }
        counts
    }
}

pub fn generate_synthetic(spec: &SyntheticCorpusSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let lexicon = spec.lexicon();
    let mut rng = Rng::new(spec.seed);
    let mut sentences = Vec::with_capacity(spec.sentences);
    for _ in 0..spec.sentences {
        let template = &spec.templates[rng.below(spec.templates.len())];
        let occupation = rng.below(spec.occupations.len());
        let male = rng.bernoulli(spec.bias);
        let (terms, gender) = if male {
            (&spec.male_terms, GenderTag::Male)
        } else {
            (&spec.female_terms, GenderTag::Female)
        };
        let term = &terms[rng.below(terms.len())];
        let text = template
            .replace("{occ}", &spec.occupations[occupation])
            .replace("{g}", term);
        let annotated = annotate(&tokenize(&text), &lexicon);
        sentences.push(SyntheticSentence {
            text,
            occupation,
            gender,
            annotated,
        });
    }
    Ok(SyntheticCorpus { sentences })
}
