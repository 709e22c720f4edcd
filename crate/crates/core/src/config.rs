//! Run configuration: flat `key = value` text plus overrides.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{Framing, ModelConfig, TrainConfig, Variant};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Gender lexicon TSV; the built-in English list when absent.
    pub lexicon: Option<PathBuf>,
    pub framing: Framing,
    pub vocab_cap: usize,
    pub embed_dim: usize,
    pub state_size: usize,
    pub memory_capacity: usize,
    pub fair_n: usize,
    pub init_scale: f64,
    pub residual: bool,
    pub lr: f64,
    pub keep_prob: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub indicators: (String, String),
    /// Bias target words; every no-gender lexicon word in the vocabulary
    /// when absent.
    pub targets: Option<Vec<String>>,
    /// Male-context probability of the synthetic generator.
    pub synth_bias: f64,
    pub synth_sentences: usize,
    /// Run data-parallel loops on the thread pool.
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: Variant::Seq2SeqFairRegion,
            train: None,
            valid: None,
            test: None,
            lexicon: None,
            framing: Framing::History,
            vocab_cap: 18000,
            embed_dim: 256,
            state_size: 256,
            memory_capacity: 1000,
            fair_n: 10,
            init_scale: 0.01,
            residual: false,
            lr: 0.001,
            keep_prob: 0.95,
            batch_size: 32,
            epochs: 20,
            seed: 0,
            out_dir: PathBuf::from("out"),
            indicators: ("man".into(), "woman".into()),
            targets: None,
            synth_bias: 0.9,
            synth_sentences: 2000,
            parallel: true,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid value {value:?} for {key}"))),
    }
}

fn words(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "variant" => self.variant = parse(key, value)?,
            "train" => self.train = opt_path(value),
            "valid" => self.valid = opt_path(value),
            "test" => self.test = opt_path(value),
            "lexicon" => self.lexicon = opt_path(value),
            "framing" => {
                self.framing = match value {
                    "history" => Framing::History,
                    "paired" => Framing::Paired,
                    _ => return Err(Error::Config(format!("unknown framing {value:?}"))),
                }
            }
            "vocab_cap" => self.vocab_cap = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "state_size" => self.state_size = parse(key, value)?,
            "memory_capacity" => self.memory_capacity = parse(key, value)?,
            "fair_n" => self.fair_n = parse(key, value)?,
            "init_scale" => self.init_scale = parse(key, value)?,
            "residual" => self.residual = parse_bool(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "keep_prob" => self.keep_prob = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "indicators" => {
                let w = words(value);
                if w.len() != 2 {
                    return Err(Error::Config(format!("indicators needs two words, got {value:?}")));
                }
                self.indicators = (w[0].clone(), w[1].clone());
            }
            "targets" => self.targets = (!value.is_empty()).then(|| words(value)),
            "synth_bias" => self.synth_bias = parse(key, value)?,
            "synth_sentences" => self.synth_sentences = parse(key, value)?,
            "parallel" => self.parallel = parse_bool(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; blank lines and `#` comments are skipped.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_text(&text)
    }

    /// Every setting as `(key, value)`, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let p = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        vec![
            ("variant", self.variant.name().to_string()),
            ("train", p(&self.train)),
            ("valid", p(&self.valid)),
            ("test", p(&self.test)),
            ("lexicon", p(&self.lexicon)),
            (
                "framing",
                match self.framing {
                    Framing::History => "history",
                    Framing::Paired => "paired",
                }
                .to_string(),
            ),
            ("vocab_cap", self.vocab_cap.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("state_size", self.state_size.to_string()),
            ("memory_capacity", self.memory_capacity.to_string()),
            ("fair_n", self.fair_n.to_string()),
            ("init_scale", self.init_scale.to_string()),
            ("residual", self.residual.to_string()),
            ("lr", self.lr.to_string()),
            ("keep_prob", self.keep_prob.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("indicators", format!("{},{}", self.indicators.0, self.indicators.1)),
            ("targets", self.targets.as_ref().map_or(String::new(), |t| t.join(","))),
            ("synth_bias", self.synth_bias.to_string()),
            ("synth_sentences", self.synth_sentences.to_string()),
            ("parallel", self.parallel.to_string()),
        ]
    }

    /// The resolved configuration in the same format [`parse_text`](Self::parse_text) reads.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            state_size: self.state_size,
            memory_capacity: self.memory_capacity,
            fair_n: self.fair_n,
            init_scale: self.init_scale,
            residual: self.residual,
            ..ModelConfig::new(vocab_size)
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            keep_prob: self.keep_prob,
            batch_size: self.batch_size,
            epochs: self.epochs,
            fair_n: self.fair_n,
            memory_capacity: self.memory_capacity,
            seed: self.seed,
        }
    }

    pub fn execution(&self) -> crate::parallel::Execution {
        if self.parallel {
            crate::parallel::Execution::Parallel
        } else {
            crate::parallel::Execution::Sequential
        }
    }
}
