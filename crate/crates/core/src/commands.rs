//! The four pipeline commands behind the `fairlm` binary.
//!
//! Every command takes a resolved [`RunConfig`], writes its artifacts under
//! `out_dir` together with `config.txt`, and is deterministic given the
//! configuration.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::checkpoint::{self, Checkpoint};
use crate::config::RunConfig;
use crate::corpus::{
    annotate, annotate_lines, generate_synthetic, read_lines, split, tokenize, AnnotatedSentence, GenderLexicon,
    SyntheticCorpusSpec, Vocabulary,
};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_bias_report, comparison_table, default_targets, BiasReport, VariantSummary};
use crate::model::{examples_from_pairs, examples_from_sequences, EpochStats, Example, Framing, Model, Trainer};
use crate::numerics::Rng;

pub const CHECKPOINT_FILE: &str = "model.frlm";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const LOSS_FILE: &str = "loss.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const REPORT_FILE: &str = "report.csv";
pub const TABLE_FILE: &str = "comparison.txt";

/// RNG stream for the train/valid/test shuffle of `synth`.
const SPLIT_STREAM: u64 = 5;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn prepare_out_dir(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    write(&cfg.out_dir.join(CONFIG_FILE), cfg.to_text())
}

pub fn load_lexicon(cfg: &RunConfig) -> Result<GenderLexicon> {
    match &cfg.lexicon {
        Some(p) => GenderLexicon::load(p),
        None => Ok(GenderLexicon::default_english()),
    }
}

/// Paths of the files written by [`cmd_synth`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
}

/// Generates a synthetic corpus and writes a 60/20/20 split of it.
pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthOutput> {
    let spec = SyntheticCorpusSpec::with_bias(cfg.synth_bias, cfg.synth_sentences, cfg.seed);
    let corpus = generate_synthetic(&spec)?;
    let mut rng = Rng::new(cfg.seed).fork(SPLIT_STREAM);
    let (train, valid, test) = split(&corpus.lines(), (0.6, 0.2, 0.2), &mut rng)?;
    prepare_out_dir(cfg)?;
    let out = SynthOutput {
        train: cfg.out_dir.join("train.txt"),
        valid: cfg.out_dir.join("valid.txt"),
        test: cfg.out_dir.join("test.txt"),
    };
    for (path, lines) in [(&out.train, train), (&out.valid, valid), (&out.test, test)] {
        let mut text = lines.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        write(path, text)?;
    }
    Ok(out)
}

/// A corpus file annotated according to the framing.
#[derive(Debug, Clone)]
pub enum LoadedCorpus {
    History(Vec<AnnotatedSentence>),
    Paired(Vec<(AnnotatedSentence, AnnotatedSentence)>),
}

impl LoadedCorpus {
    pub fn read(path: &Path, framing: Framing, lexicon: &GenderLexicon) -> Result<Self> {
        let lines = read_lines(path)?;
        Ok(match framing {
            Framing::History => LoadedCorpus::History(annotate_lines(&lines, lexicon)),
            Framing::Paired => LoadedCorpus::Paired(
                lines
                    .iter()
                    .enumerate()
                    .map(|(i, l)| {
                        let (x, y) = l.split_once('\t').ok_or_else(|| {
                            Error::Data(format!("{}:{}: expected source<TAB>target", path.display(), i + 1))
                        })?;
                        Ok((annotate(&tokenize(x), lexicon), annotate(&tokenize(y), lexicon)))
                    })
                    .collect::<Result<_>>()?,
            ),
        })
    }

    pub fn sentences(&self) -> Vec<&AnnotatedSentence> {
        match self {
            LoadedCorpus::History(s) => s.iter().collect(),
            LoadedCorpus::Paired(p) => p.iter().flat_map(|(x, y)| [x, y]).collect(),
        }
    }

    pub fn examples(&self, vocab: &Vocabulary) -> Result<Vec<Example>> {
        match self {
            LoadedCorpus::History(s) => Ok(examples_from_sequences(
                &s.iter().map(|a| vocab.encode(a)).collect::<Vec<_>>(),
            )),
            LoadedCorpus::Paired(p) => examples_from_pairs(
                &p.iter().map(|(x, y)| (vocab.encode(x), vocab.encode(y))).collect::<Vec<_>>(),
            ),
        }
    }
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Config(format!("no {what} corpus configured")))
}

fn read_examples(path: &Path, cfg: &RunConfig, lexicon: &GenderLexicon, vocab: &Vocabulary) -> Result<Vec<Example>> {
    LoadedCorpus::read(path, cfg.framing, lexicon)?.examples(vocab)
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    /// Evaluation-mode loss of the untrained model on the training corpus.
    pub initial_loss: f64,
    pub epochs: Vec<EpochStats>,
    /// Evaluation-mode loss of the trained model on the training corpus.
    pub final_loss: f64,
    pub valid_perplexity: Option<f64>,
}

/// Trains the configured variant; writes the checkpoint, vocabulary,
/// per-epoch loss log and configuration echo.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutput> {
    let lexicon = load_lexicon(cfg)?;
    let train_path = require(&cfg.train, "training")?;
    let corpus = LoadedCorpus::read(train_path, cfg.framing, &lexicon)?;
    let sentences = corpus.sentences();
    if sentences.is_empty() {
        return Err(Error::Data(format!("{} holds no sentences", train_path.display())));
    }
    let vocab = Vocabulary::build(sentences.iter().map(|s| s.tokens.as_slice()), cfg.vocab_cap)?;
    let examples = corpus.examples(&vocab)?;
    let exec = cfg.execution();

    let model = Model::new(cfg.variant, cfg.model_config(vocab.len()), cfg.seed)?;
    let initial_loss = model.corpus_nll(&examples, cfg.batch_size, exec)?.loss()?;
    let mut trainer = Trainer::new(model, cfg.train_config())?.with_execution(exec);
    let epochs = trainer.fit(&examples, |_, _| {})?;
    let model = trainer.into_model();
    let final_loss = model.corpus_nll(&examples, cfg.batch_size, exec)?.loss()?;
    let valid_perplexity = match &cfg.valid {
        Some(p) => Some(
            model
                .corpus_nll(&read_examples(p, cfg, &lexicon, &vocab)?, cfg.batch_size, exec)?
                .perplexity()?,
        ),
        None => None,
    };

    prepare_out_dir(cfg)?;
    vocab.save(&cfg.out_dir.join(VOCAB_FILE))?;
    let ckpt = cfg.out_dir.join(CHECKPOINT_FILE);
    // The output location does not affect the model, so it stays out of the
    // checkpoint and identical runs in different directories match.
    let run: BTreeMap<String, String> = cfg
        .entries()
        .into_iter()
        .filter(|(k, _)| *k != "out_dir")
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    checkpoint::save(&ckpt, &model, &vocab.hash(), &run)?;
    let mut log = String::from("epoch,batches,tokens,loss\n");
    log.push_str(&format!("0,0,0,{initial_loss}\n"));
    for s in &epochs {
        log.push_str(&format!("{},{},{},{}\n", s.epoch + 1, s.batches, s.tokens, s.mean_loss));
    }
    write(&cfg.out_dir.join(LOSS_FILE), log)?;
    Ok(TrainOutput {
        checkpoint: ckpt,
        initial_loss,
        epochs,
        final_loss,
        valid_perplexity,
    })
}

/// Checkpoint and the vocabulary stored next to it (hash-verified).
pub fn open_checkpoint(path: &Path) -> Result<(Checkpoint, Vocabulary)> {
    let vocab_path = path.parent().unwrap_or(Path::new(".")).join(VOCAB_FILE);
    let vocab = Vocabulary::load(&vocab_path)?;
    let ckpt = checkpoint::load(path, Some(&vocab.hash()))?;
    Ok((ckpt, vocab))
}

/// Test perplexity of a checkpoint on `corpus`; appends a row to
/// `out_dir/report.csv`.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, corpus: &Path) -> Result<f64> {
    let (ckpt, vocab) = open_checkpoint(checkpoint)?;
    let lexicon = load_lexicon(cfg)?;
    let examples = read_examples(corpus, cfg, &lexicon, &vocab)?;
    if examples.is_empty() {
        return Err(Error::Domain(format!("{} holds no sentences", corpus.display())));
    }
    let ppl = ckpt
        .model
        .corpus_nll(&examples, cfg.batch_size, cfg.execution())?
        .perplexity()?;

    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let report = cfg.out_dir.join(REPORT_FILE);
    let fresh = !report.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&report)
        .map_err(|e| Error::io(&report, e))?;
    let mut row = String::new();
    if fresh {
        row.push_str("checkpoint,corpus,variant,perplexity\n");
    }
    row.push_str(&format!(
        "{},{},{},{ppl}\n",
        checkpoint.display(),
        corpus.display(),
        ckpt.model.variant().name()
    ));
    f.write_all(row.as_bytes()).map_err(|e| Error::io(&report, e))?;
    Ok(ppl)
}

#[derive(Debug, Clone)]
pub struct BiasOutput {
    pub reports: Vec<BiasReport>,
    pub perplexities: Vec<f64>,
    pub table: String,
}

/// Bias report for every checkpoint on the configured train and test
/// corpora, plus a comparison table with test perplexity.
pub fn cmd_bias_report(cfg: &RunConfig, checkpoints: &[PathBuf]) -> Result<BiasOutput> {
    if checkpoints.is_empty() {
        return Err(Error::Config("no checkpoints given".into()));
    }
    let lexicon = load_lexicon(cfg)?;
    let train_path = require(&cfg.train, "training")?;
    let test_path = require(&cfg.test, "test")?;
    let exec = cfg.execution();
    let indicators = (cfg.indicators.0.as_str(), cfg.indicators.1.as_str());

    let mut reports = Vec::new();
    let mut perplexities = Vec::new();
    let mut rows = Vec::new();
    for path in checkpoints {
        let (ckpt, vocab) = open_checkpoint(path)?;
        let train = read_examples(train_path, cfg, &lexicon, &vocab)?;
        let test = read_examples(test_path, cfg, &lexicon, &vocab)?;
        let targets = match &cfg.targets {
            Some(t) => t.clone(),
            None => default_targets(&lexicon, &vocab),
        };
        let mut report =
            aggregate_bias_report(&ckpt.model, &train, &test, &vocab, &targets, indicators, cfg.batch_size, exec)?;
        report.seed = ckpt.run_config.get("seed").and_then(|s| s.parse().ok()).unwrap_or(cfg.seed);
        report.config = ckpt.run_config.clone();
        let ppl = ckpt.model.corpus_nll(&test, cfg.batch_size, exec)?.perplexity()?;
        rows.push(VariantSummary {
            variant: ckpt.model.variant().display_name().to_string(),
            perplexity: ppl,
            amplification: report.aggregate(),
        });
        reports.push(report);
        perplexities.push(ppl);
    }

    prepare_out_dir(cfg)?;
    for (i, r) in reports.iter().enumerate() {
        write(&cfg.out_dir.join(format!("bias_{i}_{}.csv", r.variant)), r.to_csv())?;
    }
    let table = comparison_table(&rows);
    write(&cfg.out_dir.join(TABLE_FILE), &table)?;
    Ok(BiasOutput {
        reports,
        perplexities,
        table,
    })
}
