//! Encoder-decoder language models: plain Seq2Seq, Seq2Seq with attention
//! over encoder states, and Seq2Seq reading from a Fair Region of the
//! key-value-gender memory.
//!
//! All three share the embedding table, a 2-layer bidirectional LSTM
//! encoder whose final states are projected to the decoder state size `d`,
//! and a unidirectional LSTM decoder with state size `d` initialised from
//! the projected encoder summary. They differ only in the output head.

mod data;
mod forward;
mod generate;
mod train;

use std::fmt;
use std::str::FromStr;

pub use data::{batches, examples_from_pairs, examples_from_sequences, Example, Framing};
pub use forward::{
    decode_step_attention, decode_step_fair, AttentionHead, AttentionStep, EncoderOutput, FairStep,
    Graph, KeySource, StepOutput,
};
pub use generate::{contextual_embeddings, fair_embedding, generate, EmbeddingLookup};
pub use train::{EpochStats, TrainConfig, Trainer};

use crate::corpus::UNK;
use crate::error::{Error, Result};
use crate::memory::MemoryModule;
use crate::numerics::{init_uniform, Rng, Tensor};

/// RNG stream ids forked from the run seed.
pub(crate) mod streams {
    pub const PARAMS: u64 = 1;
    pub const MEMORY: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Seq2Seq,
    Seq2SeqAttention,
    Seq2SeqFairRegion,
}

impl Variant {
    pub const ALL: [Variant; 3] = [
        Variant::Seq2Seq,
        Variant::Seq2SeqAttention,
        Variant::Seq2SeqFairRegion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Seq2Seq => "seq2seq",
            Variant::Seq2SeqAttention => "seq2seq-attention",
            Variant::Seq2SeqFairRegion => "seq2seq-fair-region",
        }
    }

    /// Row label used in comparison tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Variant::Seq2Seq => "Seq2Seq",
            Variant::Seq2SeqAttention => "Seq2Seq+Attention",
            Variant::Seq2SeqFairRegion => "Seq2Seq+FairRegion",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['_', '+'], "-").as_str() {
            "seq2seq" => Ok(Variant::Seq2Seq),
            "seq2seq-attention" | "attention" => Ok(Variant::Seq2SeqAttention),
            "seq2seq-fair-region" | "seq2seq-fairregion" | "fair-region" | "fairregion" => {
                Ok(Variant::Seq2SeqFairRegion)
            }
            other => Err(Error::Config(format!("unknown model variant {other:?}"))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Encoder state size per direction; also the decoder state size and
    /// the memory key dimension.
    pub state_size: usize,
    pub encoder_layers: usize,
    pub memory_capacity: usize,
    /// Neighbours per gender class in a Fair Region.
    pub fair_n: usize,
    /// Weights start from `U[-init_scale, init_scale]`.
    pub init_scale: f64,
    /// Add a linear read of the decoder state to the Fair Region logits.
    pub residual: bool,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: 256,
            state_size: 256,
            encoder_layers: 2,
            memory_capacity: 1000,
            fair_n: 10,
            init_scale: 0.01,
            residual: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size <= crate::corpus::RESERVED {
            return Err(Error::Config("vocabulary holds no words".into()));
        }
        if self.embed_dim == 0 || self.state_size == 0 || self.encoder_layers == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.fair_n == 0 {
            return Err(Error::Config("fair-region n must be at least 1".into()));
        }
        if !(self.init_scale > 0.0) {
            return Err(Error::Config("init scale must be positive".into()));
        }
        Ok(())
    }
}

/// Ordered, named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    fn add(&mut self, name: String, tensor: Tensor) -> usize {
        self.names.push(name);
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index(name).map(move |i| &mut self.tensors[i])
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LstmSlots {
    pub w_x: usize,
    pub w_h: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum HeadSlots {
    Linear {
        w: usize,
        b: usize,
    },
    Attention {
        key_proj: usize,
        comb_w: usize,
        comb_b: usize,
        out_w: usize,
        out_b: usize,
    },
    Fair {
        w: usize,
        residual: Option<usize>,
    },
}

/// Where each role lives in the [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub embedding: usize,
    /// `[layer][direction]`, direction 0 forward, 1 backward.
    pub encoder: Vec<[LstmSlots; 2]>,
    pub enc_proj_w: usize,
    pub enc_proj_b: usize,
    pub decoder: LstmSlots,
    pub head: HeadSlots,
}

/// Parameters, memory and configuration of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    variant: Variant,
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
    memory: Option<MemoryModule>,
}

impl Model {
    /// Fresh model. Weights are drawn from the `PARAMS` stream of `seed` in
    /// a fixed order (embedding, encoder, projection, decoder, head), so
    /// all variants share identical encoder and decoder weights for equal
    /// seeds. The memory uses its own stream.
    pub fn new(variant: Variant, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let base = Rng::new(seed);
        let mut rng = base.fork(streams::PARAMS);
        let s = config.init_scale;
        let mut params = ParamStore::new();
        let mut draw = |params: &mut ParamStore, name: String, shape: &[usize]| -> Result<usize> {
            let t = init_uniform(shape, -s, s, &mut rng)?;
            Ok(params.add(name, t))
        };

        let (v, e, h) = (config.vocab_size, config.embed_dim, config.state_size);
        let embedding = draw(&mut params, "embedding".into(), &[v, e])?;
        let mut encoder = Vec::with_capacity(config.encoder_layers);
        for layer in 0..config.encoder_layers {
            let input = if layer == 0 { e } else { 2 * h };
            let mut dirs = [LstmSlots { w_x: 0, w_h: 0, bias: 0 }; 2];
            for (d, dir) in ["fwd", "bwd"].iter().enumerate() {
                let p = format!("encoder.l{layer}.{dir}");
                dirs[d] = LstmSlots {
                    w_x: draw(&mut params, format!("{p}.w_x"), &[input, 4 * h])?,
                    w_h: draw(&mut params, format!("{p}.w_h"), &[h, 4 * h])?,
                    bias: draw(&mut params, format!("{p}.bias"), &[4 * h])?,
                };
            }
            encoder.push(dirs);
        }
        let enc_proj_w = draw(&mut params, "encoder.proj.w".into(), &[2 * h, h])?;
        let enc_proj_b = draw(&mut params, "encoder.proj.b".into(), &[h])?;
        let decoder = LstmSlots {
            w_x: draw(&mut params, "decoder.w_x".into(), &[e, 4 * h])?,
            w_h: draw(&mut params, "decoder.w_h".into(), &[h, 4 * h])?,
            bias: draw(&mut params, "decoder.bias".into(), &[4 * h])?,
        };
        let head = match variant {
            Variant::Seq2Seq => HeadSlots::Linear {
                w: draw(&mut params, "head.w".into(), &[h, v])?,
                b: draw(&mut params, "head.b".into(), &[v])?,
            },
            Variant::Seq2SeqAttention => HeadSlots::Attention {
                key_proj: draw(&mut params, "head.key_proj".into(), &[2 * h, h])?,
                comb_w: draw(&mut params, "head.comb_w".into(), &[2 * h, h])?,
                comb_b: draw(&mut params, "head.comb_b".into(), &[h])?,
                out_w: draw(&mut params, "head.w".into(), &[h, v])?,
                out_b: draw(&mut params, "head.b".into(), &[v])?,
            },
            Variant::Seq2SeqFairRegion => HeadSlots::Fair {
                w: draw(&mut params, "head.w".into(), &[h, v])?,
                residual: if config.residual {
                    Some(draw(&mut params, "head.residual".into(), &[h, v])?)
                } else {
                    None
                },
            },
        };
        let memory = match variant {
            Variant::Seq2SeqFairRegion => Some(MemoryModule::init(
                config.memory_capacity,
                h,
                config.fair_n,
                UNK,
                &mut base.fork(streams::MEMORY),
            )?),
            _ => None,
        };
        Ok(Model {
            variant,
            config,
            params,
            layout: Layout {
                embedding,
                encoder,
                enc_proj_w,
                enc_proj_b,
                decoder,
                head,
            },
            memory,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn memory(&self) -> Option<&MemoryModule> {
        self.memory.as_ref()
    }

    pub fn memory_mut(&mut self) -> Option<&mut MemoryModule> {
        self.memory.as_mut()
    }

    pub(crate) fn params_and_memory_mut(&mut self) -> (&mut ParamStore, Option<&mut MemoryModule>) {
        (&mut self.params, self.memory.as_mut())
    }

    /// Replaces every parameter (and memory) with values loaded elsewhere.
    /// Names and shapes must match this model's layout.
    pub fn load_state(&mut self, tensors: Vec<(String, Tensor)>, memory: Option<MemoryModule>) -> Result<()> {
        if tensors.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                self.params.len(),
                tensors.len()
            )));
        }
        for (name, t) in tensors {
            let slot = self
                .params
                .get_mut(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter {name:?}")))?;
            if slot.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name:?} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        match (&self.memory, memory) {
            (None, None) => {}
            (Some(cur), Some(m)) => {
                if cur.capacity() != m.capacity() || cur.dim() != m.dim() {
                    return Err(Error::Checkpoint("memory dimensions differ".into()));
                }
                self.memory = Some(m);
            }
            _ => return Err(Error::Checkpoint("memory section does not match variant".into())),
        }
        Ok(())
    }

    /// Sets every parameter tensor to zero. Memory keys stay as they are
    /// (they must remain unit norm).
    pub fn zero_parameters(&mut self) {
        for t in self.params.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}
