//! Differentiable forward passes on a [`Tape`].

use crate::corpus::PAD;
use crate::error::{Error, Result};
use crate::memory::{FairRegionView, GenderTag, MemoryModule};
use crate::metrics::TokenNll;
use crate::numerics::{dropout_mask, lstm_step, LstmVars, Rng, Tape, Tensor, Var};
use crate::parallel::{map_range, Execution};

use super::{Example, HeadSlots, LstmSlots, Model, Variant};

/// Where a Fair Region read takes its keys from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeySource {
    /// Gather rows from a full `[m, d]` key matrix already on the tape.
    Full(Var),
    /// Copy only the selected rows out of the memory as a fresh leaf.
    Snapshot,
}

/// Result of one Fair Region decoding step over a batch.
#[derive(Debug, Clone)]
pub struct FairStep {
    /// Pre-softmax scores over the output vocabulary, `[B, V]`.
    pub logits: Var,
    /// `tanh` of the attention-weighted key sum, `[B, d]`.
    pub context: Var,
    /// Attention weights over the region, `[B, 3k]`.
    pub weights: Var,
    /// Selected keys, `[B * 3k, d]`, row `b * 3k + j` for query `b`.
    pub keys: Var,
    /// Memory index of every row of `keys`.
    pub key_ids: Vec<usize>,
    pub regions: Vec<FairRegionView>,
}

/// Reads the memory through a Fair Region around every query row and maps
/// the result to vocabulary logits:
///
/// ```text
/// alpha   = softmax(q . K_fair)
/// context = tanh(sum_j alpha_j K_fair[j])
/// logits  = context W
/// ```
///
/// `query` rows must be unit norm. `w` is `[d, V]`.
pub fn decode_step_fair(
    tape: &mut Tape,
    query: Var,
    memory: &MemoryModule,
    keys: KeySource,
    w: Var,
    n: usize,
    exec: Execution,
) -> Result<FairStep> {
    let qv = tape.value(query);
    let rows = qv.rows();
    let regions: Vec<FairRegionView> = map_range(rows, exec, |b| memory.fair_region(qv.row(b), n))
        .into_iter()
        .collect::<Result<_>>()?;
    let mut key_ids = Vec::with_capacity(rows * regions[0].len());
    for r in &regions {
        if r.len() != regions[0].len() {
            return Err(Error::Contract("fair regions of one batch differ in size".into()));
        }
        key_ids.extend(r.indices());
    }
    let selected = match keys {
        KeySource::Full(all) => tape.gather_rows(all, key_ids.clone())?,
        KeySource::Snapshot => {
            let mut data = Vec::with_capacity(key_ids.len() * memory.dim());
            for &i in &key_ids {
                data.extend_from_slice(memory.key(i));
            }
            tape.leaf(Tensor::new(vec![key_ids.len(), memory.dim()], data)?)
        }
    };
    let scores = tape.row_dot(query, selected)?;
    let weights = tape.softmax_rows(scores);
    let mixed = tape.weighted_rows(weights, selected)?;
    let context = tape.tanh(mixed);
    let logits = tape.matmul(context, w)?;
    Ok(FairStep {
        logits,
        context,
        weights,
        keys: selected,
        key_ids,
        regions,
    })
}

/// Parameters of the attention output head.
#[derive(Debug, Clone, Copy)]
pub struct AttentionHead {
    /// `[2d, d]`, applied to `[h_deco; context]`.
    pub comb_w: Var,
    pub comb_b: Var,
    /// `[d, V]`.
    pub out_w: Var,
    pub out_b: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionStep {
    pub logits: Var,
    /// `tanh([h; context] W_c + b_c)`, `[B, d]`.
    pub combined: Var,
    /// `[B, T]`; entries past a row's source length are zero.
    pub weights: Var,
}

/// Dot-product attention of decoder states over (projected) encoder
/// states. `enc_keys` is `[B * T, d]` with row `b * T + t` holding position
/// `t` of source `b`; `lengths[b]` bounds the positions row `b` may attend.
pub fn decode_step_attention(
    tape: &mut Tape,
    h_deco: Var,
    enc_keys: Var,
    lengths: &[usize],
    head: &AttentionHead,
) -> Result<AttentionStep> {
    if lengths.is_empty() || lengths.contains(&0) {
        return Err(Error::Contract("attention over empty encoder states".into()));
    }
    let scores = tape.row_dot(h_deco, enc_keys)?;
    let weights = tape.masked_softmax_rows(scores, lengths)?;
    let context = tape.weighted_rows(weights, enc_keys)?;
    let joined = tape.concat_cols(&[h_deco, context])?;
    let pre = tape.matmul(joined, head.comb_w)?;
    let pre = tape.add_bias(pre, head.comb_b)?;
    let combined = tape.tanh(pre);
    let logits = tape.matmul(combined, head.out_w)?;
    let logits = tape.add_bias(logits, head.out_b)?;
    Ok(AttentionStep {
        logits,
        combined,
        weights,
    })
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// Projected summary `[B, d]`; the decoder's initial hidden state.
    pub h_enco: Var,
    /// Top-layer `[fwd; bwd]` states per source position, each `[B, 2H]`.
    pub states: Vec<Var>,
    pub lengths: Vec<usize>,
    /// Projected states for the attention head, `[B * T, d]`.
    pub attention_keys: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub h: Var,
    pub c: Var,
    pub logits: Var,
    /// Head representation used for bias measurement: the Fair Region
    /// context for the memory variant, the decoder output otherwise.
    pub embedding: Var,
    /// Unit-normalised decoder output (memory variant only).
    pub query: Option<Var>,
    pub regions: Vec<FairRegionView>,
}

/// A pending memory write collected during a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingWrite {
    pub key: Vec<f64>,
    pub value: u32,
    pub tag: GenderTag,
}

/// Teacher-forced pass over a batch.
#[derive(Debug, Clone)]
pub struct BatchForward {
    /// Summed token NLL (scalar on the tape).
    pub nll_sum: Var,
    pub tokens: usize,
    pub writes: Vec<PendingWrite>,
    /// `(input token, unit head embedding)` for every decoding position
    /// after the first.
    pub embeddings: Vec<(u32, Vec<f64>)>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Collect {
    pub writes: bool,
    pub embeddings: bool,
}

/// Model parameters bound to a tape for one forward (and backward) pass.
pub struct Graph<'a> {
    pub tape: Tape,
    model: &'a Model,
    vars: Vec<Var>,
    keys: KeySource,
    key_reads: Vec<(Var, Vec<usize>)>,
    dropout: Option<(f64, &'a mut Rng)>,
    exec: Execution,
}

impl<'a> Graph<'a> {
    /// Evaluation-mode graph (no dropout). Memory keys are read as
    /// snapshots of the selected rows.
    pub fn new(model: &'a Model, exec: Execution) -> Self {
        let mut tape = Tape::new();
        let vars = model.params().tensors().iter().map(|t| tape.leaf(t.clone())).collect();
        Graph {
            tape,
            model,
            vars,
            keys: KeySource::Snapshot,
            key_reads: Vec::new(),
            dropout: None,
            exec,
        }
    }

    /// Enables inverted dropout with masks drawn from `rng`.
    pub fn with_dropout(mut self, keep_prob: f64, rng: &'a mut Rng) -> Result<Self> {
        crate::numerics::check_keep_prob(keep_prob)?;
        if keep_prob < 1.0 {
            self.dropout = Some((keep_prob, rng));
        }
        Ok(self)
    }

    /// Puts the whole `[m, d]` key matrix on the tape and gathers from it.
    pub fn with_full_keys(mut self) -> Self {
        if let Some(mem) = self.model.memory() {
            let v = self.tape.leaf(mem.keys().clone());
            self.keys = KeySource::Full(v);
        }
        self
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    /// Tape handles of the parameters, in [`ParamStore`](super::ParamStore) order.
    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn full_keys(&self) -> Option<Var> {
        match self.keys {
            KeySource::Full(v) => Some(v),
            KeySource::Snapshot => None,
        }
    }

    /// Snapshot key reads: `(leaf, memory row ids)`.
    pub fn key_reads(&self) -> &[(Var, Vec<usize>)] {
        &self.key_reads
    }

    fn lstm(&self, s: LstmSlots) -> LstmVars {
        LstmVars {
            w_x: self.vars[s.w_x],
            w_h: self.vars[s.w_h],
            bias: self.vars[s.bias],
        }
    }

    fn drop(&mut self, x: Var) -> Result<Var> {
        match self.dropout.as_mut() {
            Some((keep, rng)) => {
                let mask = dropout_mask(self.tape.value(x).len(), *keep, rng)?;
                self.tape.mul_const(x, mask)
            }
            None => Ok(x),
        }
    }

    fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.tape.leaf(Tensor::zeros(&[rows, cols]))
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        let v = self.model.config().vocab_size;
        match ids.iter().find(|&&i| i as usize >= v) {
            Some(bad) => Err(Error::Data(format!(
                "token id {bad} outside vocabulary of size {v}"
            ))),
            None => Ok(()),
        }
    }

    fn embed(&mut self, ids: Vec<u32>) -> Result<Var> {
        let table = self.vars[self.model.layout().embedding];
        let x = self
            .tape
            .gather_rows(table, ids.into_iter().map(|i| i as usize).collect())?;
        self.drop(x)
    }

    /// Embedding, 2-layer bidirectional LSTM, projection of the final
    /// `[fwd; bwd]` states to the decoder size.
    pub fn encode(&mut self, sources: &[&[u32]]) -> Result<EncoderOutput> {
        if sources.is_empty() || sources.iter().any(|s| s.is_empty()) {
            return Err(Error::Contract("cannot encode an empty sequence".into()));
        }
        for s in sources {
            self.check_ids(s)?;
        }
        let batch = sources.len();
        let lengths: Vec<usize> = sources.iter().map(|s| s.len()).collect();
        let steps = *lengths.iter().max().unwrap();
        let hidden = self.model.config().state_size;
        let layout = self.model.layout().clone();

        let mut inputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let ids = sources.iter().map(|s| s.get(t).copied().unwrap_or(PAD)).collect();
            inputs.push(self.embed(ids)?);
        }
        let live = |t: usize| -> Vec<bool> { lengths.iter().map(|&l| t < l).collect() };

        let mut fwd_final = None;
        let mut bwd_final = None;
        let mut outputs = Vec::new();
        for (layer, dirs) in layout.encoder.iter().enumerate() {
            let mut per_dir = [vec![None; steps], vec![None; steps]];
            for (d, slots) in dirs.iter().enumerate() {
                let cell = self.lstm(*slots);
                let mut h = self.zeros(batch, hidden);
                let mut c = self.zeros(batch, hidden);
                let order: Vec<usize> = if d == 0 {
                    (0..steps).collect()
                } else {
                    (0..steps).rev().collect()
                };
                for t in order {
                    let (h2, c2) = lstm_step(&mut self.tape, inputs[t], h, c, &cell)?;
                    let mask = live(t);
                    if mask.iter().all(|&m| m) {
                        h = h2;
                        c = c2;
                    } else {
                        h = self.tape.blend_rows(h2, h, mask.clone())?;
                        c = self.tape.blend_rows(c2, c, mask)?;
                    }
                    per_dir[d][t] = Some(h);
                }
            }
            let [f, b] = per_dir;
            let f: Vec<Var> = f.into_iter().map(Option::unwrap).collect();
            let b: Vec<Var> = b.into_iter().map(Option::unwrap).collect();
            fwd_final = Some(f[steps - 1]);
            bwd_final = Some(b[0]);
            outputs = (0..steps)
                .map(|t| self.tape.concat_cols(&[f[t], b[t]]))
                .collect::<Result<Vec<_>>>()?;
            if layer + 1 < layout.encoder.len() {
                inputs = outputs
                    .iter()
                    .map(|&o| self.drop(o))
                    .collect::<Result<Vec<_>>>()?;
            }
        }

        let summary = self
            .tape
            .concat_cols(&[fwd_final.unwrap(), bwd_final.unwrap()])?;
        let summary = self.drop(summary)?;
        let h_enco = self.tape.matmul(summary, self.vars[layout.enc_proj_w])?;
        let h_enco = self.tape.add_bias(h_enco, self.vars[layout.enc_proj_b])?;

        let attention_keys = match layout.head {
            HeadSlots::Attention { key_proj, .. } => {
                let proj = self.vars[key_proj];
                let keys = outputs
                    .iter()
                    .map(|&o| self.tape.matmul(o, proj))
                    .collect::<Result<Vec<_>>>()?;
                Some(self.tape.interleave_rows(&keys)?)
            }
            _ => None,
        };
        Ok(EncoderOutput {
            h_enco,
            states: outputs,
            lengths,
            attention_keys,
        })
    }

    /// Initial decoder state: `h = h_enco`, `c = 0`.
    pub fn start_state(&mut self, enc: &EncoderOutput) -> (Var, Var) {
        let rows = self.tape.value(enc.h_enco).rows();
        let c = self.zeros(rows, self.model.config().state_size);
        (enc.h_enco, c)
    }

    /// One decoder step: `h_i = LSTM(y_{i-1}, h_{i-1})`, then the head.
    pub fn step(&mut self, enc: &EncoderOutput, inputs: &[u32], h: Var, c: Var) -> Result<StepOutput> {
        self.check_ids(inputs)?;
        let layout = self.model.layout().clone();
        let x = self.embed(inputs.to_vec())?;
        let cell = self.lstm(layout.decoder);
        let (h, c) = lstm_step(&mut self.tape, x, h, c, &cell)?;
        let out = self.drop(h)?;
        let (logits, embedding, query, regions) = match layout.head {
            HeadSlots::Linear { w, b } => {
                let l = self.tape.matmul(out, self.vars[w])?;
                let l = self.tape.add_bias(l, self.vars[b])?;
                (l, out, None, Vec::new())
            }
            HeadSlots::Attention {
                comb_w,
                comb_b,
                out_w,
                out_b,
                ..
            } => {
                let head = AttentionHead {
                    comb_w: self.vars[comb_w],
                    comb_b: self.vars[comb_b],
                    out_w: self.vars[out_w],
                    out_b: self.vars[out_b],
                };
                let keys = enc
                    .attention_keys
                    .ok_or_else(|| Error::Contract("encoder output lacks attention keys".into()))?;
                let s = decode_step_attention(&mut self.tape, out, keys, &enc.lengths, &head)?;
                (s.logits, out, None, Vec::new())
            }
            HeadSlots::Fair { w, residual } => {
                let memory = self
                    .model
                    .memory()
                    .ok_or_else(|| Error::Contract("fair-region head without memory".into()))?;
                let query = self.tape.normalize_rows(out);
                let s = decode_step_fair(
                    &mut self.tape,
                    query,
                    memory,
                    self.keys,
                    self.vars[w],
                    self.model.config().fair_n,
                    self.exec,
                )?;
                if self.keys == KeySource::Snapshot {
                    self.key_reads.push((s.keys, s.key_ids.clone()));
                }
                let logits = match residual {
                    Some(r) => {
                        let extra = self.tape.matmul(out, self.vars[r])?;
                        self.tape.add(s.logits, extra)?
                    }
                    None => s.logits,
                };
                (logits, s.context, Some(query), s.regions)
            }
        };
        Ok(StepOutput {
            h,
            c,
            logits,
            embedding,
            query,
            regions,
        })
    }

    /// Teacher-forced decoding of a batch, summing token NLL.
    pub fn teacher_forced(&mut self, batch: &[Example], collect: Collect) -> Result<BatchForward> {
        let sources: Vec<&[u32]> = batch.iter().map(|e| e.source.as_slice()).collect();
        let enc = self.encode(&sources)?;
        let dec_in: Vec<Vec<u32>> = batch.iter().map(Example::decoder_inputs).collect();
        let dec_out: Vec<Vec<u32>> = batch.iter().map(Example::decoder_outputs).collect();
        let tags: Vec<Vec<GenderTag>> = batch.iter().map(Example::output_tags).collect();
        for d in &dec_out {
            self.check_ids(d)?;
        }
        let steps = dec_in.iter().map(Vec::len).max().unwrap_or(0);
        let (mut h, mut c) = self.start_state(&enc);

        let mut total: Option<Var> = None;
        let mut per_step = Vec::with_capacity(steps);
        for i in 0..steps {
            let inputs: Vec<u32> = dec_in.iter().map(|d| d.get(i).copied().unwrap_or(PAD)).collect();
            let step = self.step(&enc, &inputs, h, c)?;
            let targets: Vec<Option<usize>> =
                dec_out.iter().map(|d| d.get(i).map(|&t| t as usize)).collect();
            let ce = self.tape.cross_entropy(step.logits, targets)?;
            total = Some(match total {
                Some(t) => self.tape.add(t, ce)?,
                None => ce,
            });
            h = step.h;
            c = step.c;
            per_step.push(step);
        }

        // Writes go sentence by sentence, position by position.
        let mut writes = Vec::new();
        let mut embeddings = Vec::new();
        for (b, d) in dec_out.iter().enumerate() {
            for (i, &y) in d.iter().enumerate() {
                let step = &per_step[i];
                if collect.writes {
                    if let Some(q) = step.query {
                        writes.push(PendingWrite {
                            key: self.tape.value(q).row(b).to_vec(),
                            value: y,
                            tag: tags[b][i],
                        });
                    }
                }
                if collect.embeddings && i > 0 {
                    let row = self.tape.value(step.embedding).row(b);
                    embeddings.push((dec_in[b][i], unit(row)));
                }
            }
        }
        Ok(BatchForward {
            nll_sum: total.ok_or_else(|| Error::Contract("empty batch".into()))?,
            tokens: dec_out.iter().map(Vec::len).sum(),
            writes,
            embeddings,
        })
    }
}

/// `v / |v|`, or the constant direction `1/sqrt(d)` for a zero vector.
pub(crate) fn unit(v: &[f64]) -> Vec<f64> {
    let n = crate::numerics::norm(v);
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        vec![1.0 / (v.len() as f64).sqrt(); v.len()]
    }
}

/// Loss and gradients of one training batch.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    /// Token-mean NLL.
    pub loss: f64,
    pub tokens: usize,
    /// In [`ParamStore`](super::ParamStore) order.
    pub params: Vec<Tensor>,
    /// Dense `[m, d]` gradient of the memory keys (memory variant only).
    pub keys: Option<Tensor>,
    pub writes: Vec<PendingWrite>,
}

impl Model {
    /// Token-mean NLL of `examples` as a single batch, evaluation mode.
    pub fn loss(&self, examples: &[Example]) -> Result<f64> {
        Ok(self.batch_nll(examples, Execution::Sequential)?.mean())
    }

    pub(crate) fn batch_nll(&self, batch: &[Example], exec: Execution) -> Result<TokenNll> {
        let mut g = Graph::new(self, exec);
        let out = g.teacher_forced(batch, Collect::default())?;
        Ok(TokenNll::new(g.tape.value(out.nll_sum).item(), out.tokens))
    }

    /// Summed NLL over a corpus in evaluation mode. Batches run in
    /// parallel under `exec` and are reduced in corpus order.
    pub fn corpus_nll(&self, examples: &[Example], batch_size: usize, exec: Execution) -> Result<TokenNll> {
        let chunks = super::batches(examples, batch_size);
        let parts = crate::parallel::map_ordered(&chunks, exec, |b| self.batch_nll(b, Execution::Sequential));
        let mut acc = TokenNll::default();
        for p in parts {
            acc.merge(p?);
        }
        Ok(acc)
    }

    /// Forward and backward pass for one batch. `dropout` supplies the keep
    /// probability and mask generator for training mode.
    pub fn batch_gradients(
        &self,
        batch: &[Example],
        dropout: Option<(f64, &mut Rng)>,
        exec: Execution,
    ) -> Result<BatchGradients> {
        let mut g = Graph::new(self, exec);
        if let Some((keep, rng)) = dropout {
            g = g.with_dropout(keep, rng)?;
        }
        let out = g.teacher_forced(
            batch,
            Collect {
                writes: true,
                embeddings: false,
            },
        )?;
        let sum = g.tape.value(out.nll_sum).item();
        let mean = g.tape.scale(out.nll_sum, 1.0 / out.tokens as f64);
        let mut grads = g.tape.backward(mean)?;
        let params = g.vars.iter().map(|&v| grads.take(v)).collect();
        let keys = self.memory().map(|mem| {
            let mut dense = Tensor::zeros(mem.keys().shape());
            for (var, ids) in &g.key_reads {
                let part = grads.take(*var);
                for (r, &i) in ids.iter().enumerate() {
                    for (o, v) in dense.row_mut(i).iter_mut().zip(part.row(r)) {
                        *o += v;
                    }
                }
            }
            dense
        });
        Ok(BatchGradients {
            loss: sum / out.tokens as f64,
            tokens: out.tokens,
            params,
            keys,
            writes: out.writes,
        })
    }

    /// Whether this model reads memory keys during decoding.
    pub fn uses_memory(&self) -> bool {
        self.variant() == Variant::Seq2SeqFairRegion
    }
}
