use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairlm::commands::{cmd_bias_report, cmd_eval, cmd_synth, cmd_train};
use fairlm::config::RunConfig;
use fairlm::Result;

/// Fair Region memory language models and bias amplification reports.
#[derive(Parser)]
#[command(name = "fairlm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic gender-skewed corpus as train/valid/test files.
    Synth(Common),
    /// Train a model and write checkpoint, vocabulary and loss log.
    Train(Common),
    /// Print the perplexity of a checkpoint on a corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Bias scores and amplification for one or more checkpoints.
    BiasReport {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

/// Settings shared by all commands. Precedence: defaults, then `--config`,
/// then the flags below, then `--set`.
#[derive(Args)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// `history` or `paired`.
    #[arg(long)]
    framing: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    keep_prob: Option<f64>,
    #[arg(long)]
    vocab_cap: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    state_size: Option<usize>,
    #[arg(long)]
    memory_capacity: Option<usize>,
    #[arg(long)]
    fair_n: Option<usize>,
    /// Two comma-separated indicator words, e.g. `man,woman`.
    #[arg(long)]
    indicators: Option<String>,
    /// Comma-separated bias target words.
    #[arg(long)]
    targets: Option<String>,
    /// Male-context probability for `synth`.
    #[arg(long)]
    synth_bias: Option<f64>,
    #[arg(long)]
    synth_sentences: Option<usize>,
    /// Run everything on one thread.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let flags = [
            ("variant", self.variant.clone()),
            ("train", path(&self.train)),
            ("valid", path(&self.valid)),
            ("test", path(&self.test)),
            ("lexicon", path(&self.lexicon)),
            ("framing", self.framing.clone()),
            ("out_dir", path(&self.out_dir)),
            ("seed", self.seed.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("keep_prob", self.keep_prob.map(|v| v.to_string())),
            ("vocab_cap", self.vocab_cap.map(|v| v.to_string())),
            ("embed_dim", self.embed_dim.map(|v| v.to_string())),
            ("state_size", self.state_size.map(|v| v.to_string())),
            ("memory_capacity", self.memory_capacity.map(|v| v.to_string())),
            ("fair_n", self.fair_n.map(|v| v.to_string())),
            ("indicators", self.indicators.clone()),
            ("targets", self.targets.clone()),
            ("synth_bias", self.synth_bias.map(|v| v.to_string())),
            ("synth_sentences", self.synth_sentences.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        if self.sequential {
            cfg.parallel = false;
        }
        for s in &self.sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| fairlm::Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(c) => {
            let out = cmd_synth(&c.resolve()?)?;
            println!("wrote {}, {}, {}", out.train.display(), out.valid.display(), out.test.display());
        }
        Command::Train(c) => {
            let out = cmd_train(&c.resolve()?)?;
            println!("initial loss {:.4}, final loss {:.4}", out.initial_loss, out.final_loss);
            if let Some(p) = out.valid_perplexity {
                println!("validation perplexity {p:.4}");
            }
            println!("checkpoint {}", out.checkpoint.display());
        }
        Command::Eval {
            checkpoint,
            corpus,
            common,
        } => {
            let ppl = cmd_eval(&common.resolve()?, &checkpoint, &corpus)?;
            println!("{ppl}");
        }
        Command::BiasReport { checkpoints, common } => {
            let out = cmd_bias_report(&common.resolve()?, &checkpoints)?;
            for r in &out.reports {
                if !r.skipped.is_empty() {
                    eprintln!("{}: skipped out-of-vocabulary targets: {}", r.variant, r.skipped.join(", "));
                }
            }
            print!("{}", out.table);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
