//! Mini-batch training with Adam and memory write-back.

use crate::error::{Error, Result};
use crate::numerics::{adam_step, AdamState, Rng, Tensor};
use crate::parallel::Execution;

use super::{batches, streams, Example, Model, ModelConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub keep_prob: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub fair_n: usize,
    pub memory_capacity: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            keep_prob: 0.95,
            batch_size: 32,
            epochs: 20,
            fair_n: 10,
            memory_capacity: 1000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.learning_rate)));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::Config(format!("keep_prob must be in (0, 1], got {}", self.keep_prob)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    /// Copies the memory settings into a model configuration.
    pub fn apply(&self, model: &mut ModelConfig) {
        model.fair_n = self.fair_n;
        model.memory_capacity = self.memory_capacity;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochStats {
    pub epoch: usize,
    pub batches: usize,
    pub tokens: usize,
    /// Token-weighted mean of the batch losses (training mode).
    pub mean_loss: f64,
    /// Memory writes applied during the epoch.
    pub writes: usize,
}

/// Owns a model and its optimizer state for the length of a run.
pub struct Trainer {
    model: Model,
    config: TrainConfig,
    adam: AdamState,
    dropout: Rng,
    shuffle: Rng,
    epoch: usize,
    exec: Execution,
}

const KEYS_NAME: &str = "memory.keys";

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let base = Rng::new(config.seed);
        let adam = AdamState::new(
            model
                .params()
                .tensors()
                .iter()
                .chain(model.memory().map(|m| m.keys())),
        );
        Ok(Trainer {
            model,
            adam,
            dropout: base.fork(streams::DROPOUT),
            shuffle: base.fork(streams::SHUFFLE),
            config,
            epoch: 0,
            exec: Execution::default(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// One optimisation step on `batch`; returns `(loss, tokens, writes)`.
    ///
    /// Order: forward with teacher forcing, backward, Adam on parameters
    /// and memory keys, renormalise keys, then write every decoding
    /// position of the batch to memory in input order.
    pub fn step(&mut self, batch: &[Example]) -> Result<(f64, usize, usize)> {
        let g = self.model.batch_gradients(
            batch,
            Some((self.config.keep_prob, &mut self.dropout)),
            self.exec,
        )?;
        if !g.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: self.epoch,
                batch: 0,
            });
        }
        let mut grads = g.params;
        grads.extend(g.keys);

        let (params, memory) = self.model.params_and_memory_mut();
        let names: Vec<String> = params.names().to_vec();
        let mut keys = memory.as_ref().map(|m| m.keys().clone());
        {
            let mut slots: Vec<(&str, &mut Tensor)> = names
                .iter()
                .map(String::as_str)
                .zip(params.tensors_mut().iter_mut())
                .collect();
            if let Some(k) = keys.as_mut() {
                slots.push((KEYS_NAME, k));
            }
            adam_step(&mut slots, &grads, &mut self.adam, self.config.learning_rate)?;
        }
        let mut writes = 0;
        if let (Some(mem), Some(k)) = (memory, keys) {
            *mem.keys_mut() = k;
            mem.renormalize_keys()?;
            for w in &g.writes {
                mem.write(&w.key, w.value, w.tag)?;
                writes += 1;
            }
        }
        Ok((g.loss, g.tokens, writes))
    }

    /// One pass over `examples` in a freshly shuffled order.
    pub fn train_epoch(&mut self, examples: &[Example]) -> Result<EpochStats> {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        self.shuffle.shuffle(&mut order);
        let shuffled: Vec<Example> = order.iter().map(|&i| examples[i].clone()).collect();

        let mut stats = EpochStats {
            epoch: self.epoch,
            ..EpochStats::default()
        };
        let mut nll = 0.0;
        for (b, batch) in batches(&shuffled, self.config.batch_size).into_iter().enumerate() {
            let (loss, tokens, writes) = self.step(batch).map_err(|e| match e {
                Error::NonFiniteLoss { epoch, .. } => Error::NonFiniteLoss { epoch, batch: b },
                other => other,
            })?;
            nll += loss * tokens as f64;
            stats.batches += 1;
            stats.tokens += tokens;
            stats.writes += writes;
        }
        stats.mean_loss = if stats.tokens > 0 {
            nll / stats.tokens as f64
        } else {
            0.0
        };
        self.epoch += 1;
        Ok(stats)
    }

    /// Runs `config.epochs` epochs, calling `on_epoch` after each.
    pub fn fit(
        &mut self,
        examples: &[Example],
        mut on_epoch: impl FnMut(&EpochStats, &Model),
    ) -> Result<Vec<EpochStats>> {
        let mut all = Vec::with_capacity(self.config.epochs);
        for _ in 0..self.config.epochs {
            let s = self.train_epoch(examples)?;
            on_epoch(&s, &self.model);
            all.push(s);
        }
        Ok(all)
    }
}
