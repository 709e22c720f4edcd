//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FRLM"  u32 version  u32 section count
//! per section: u32 name length, name bytes, u64 payload length, payload
//! ```
//!
//! Sections, in order: `config` (UTF-8 `key = value` lines), `vocab_hash`
//! (32 bytes), `encoder`, `decoder`, `W` (tensor lists) and, for the Fair
//! Region model, `memory`. A tensor list is a u32 count followed by
//! `name, u32 rank, u32 dims..., f32 values`. The memory section holds
//! `u32 m, u32 d`, `m * d` f32 keys, `m` u32 values and `m` u8 tags.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::memory::{GenderTag, MemoryModule};
use crate::model::{Model, ModelConfig, Variant};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"FRLM";
pub const VERSION: u32 = 1;

/// A loaded checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab_hash: [u8; 32],
    /// Run settings stored alongside the model (`run.*` config keys).
    pub run_config: BTreeMap<String, String>,
}

fn section_of(name: &str) -> &'static str {
    if name.starts_with("embedding") || name.starts_with("encoder") {
        "encoder"
    } else if name.starts_with("decoder") {
        "decoder"
    } else {
        "W"
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }

    fn f32s(&mut self, xs: &[f64]) {
        for &x in xs {
            self.0.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
}

fn config_text(model: &Model, run: &BTreeMap<String, String>) -> String {
    let c = model.config();
    let mut s = format!(
        "variant = {}\nvocab_size = {}\nembed_dim = {}\nstate_size = {}\nencoder_layers = {}\n\
         memory_capacity = {}\nfair_n = {}\ninit_scale = {}\nresidual = {}\n",
        model.variant().name(),
        c.vocab_size,
        c.embed_dim,
        c.state_size,
        c.encoder_layers,
        c.memory_capacity,
        c.fair_n,
        c.init_scale,
        c.residual
    );
    for (k, v) in run {
        s.push_str(&format!("run.{k} = {v}\n"));
    }
    s
}

/// Serialises `model` with the hash of its vocabulary file.
pub fn to_bytes(model: &Model, vocab_hash: &[u8; 32], run: &BTreeMap<String, String>) -> Vec<u8> {
    let mut sections: Vec<(&str, Vec<u8>)> = vec![
        ("config", config_text(model, run).into_bytes()),
        ("vocab_hash", vocab_hash.to_vec()),
    ];
    for part in ["encoder", "decoder", "W"] {
        let entries: Vec<(&str, &Tensor)> = model.params().iter().filter(|(n, _)| section_of(n) == part).collect();
        let mut w = Writer(Vec::new());
        w.u32(entries.len());
        for (name, t) in entries {
            w.str(name);
            w.u32(t.shape().len());
            for &d in t.shape() {
                w.u32(d);
            }
            w.f32s(t.data());
        }
        sections.push((part, w.0));
    }
    if let Some(mem) = model.memory() {
        let mut w = Writer(Vec::new());
        w.u32(mem.capacity());
        w.u32(mem.dim());
        w.f32s(mem.keys().data());
        for &v in mem.values() {
            w.u32(v as usize);
        }
        w.0.extend(mem.tags().iter().map(|t| t.code()));
        sections.push(("memory", w.0));
    }

    let mut out = Writer(MAGIC.to_vec());
    out.u32(VERSION as usize);
    out.u32(sections.len());
    for (name, payload) in sections {
        out.str(name);
        out.0.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.0.extend_from_slice(&payload);
    }
    out.0
}

pub fn save(path: &Path, model: &Model, vocab_hash: &[u8; 32], run: &BTreeMap<String, String>) -> Result<()> {
    std::fs::write(path, to_bytes(model, vocab_hash, run)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(what: &str) -> Error {
    Error::Checkpoint(format!("truncated or corrupt checkpoint ({what})"))
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()) as usize)
    }

    fn str(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)?;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| corrupt(what))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| corrupt(what))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn parse_config(text: &str) -> Result<(Variant, ModelConfig, BTreeMap<String, String>)> {
    let mut map = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| corrupt("config line"))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    fn get<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
        map.get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Checkpoint(format!("config entry {key:?} missing or invalid")))
    }
    let variant: Variant = get(&map, "variant")?;
    let config = ModelConfig {
        vocab_size: get(&map, "vocab_size")?,
        embed_dim: get(&map, "embed_dim")?,
        state_size: get(&map, "state_size")?,
        encoder_layers: get(&map, "encoder_layers")?,
        memory_capacity: get(&map, "memory_capacity")?,
        fair_n: get(&map, "fair_n")?,
        init_scale: get(&map, "init_scale")?,
        residual: get(&map, "residual")?,
    };
    let run = map
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("run.").map(|k| (k.to_string(), v.clone())))
        .collect();
    Ok((variant, config, run))
}

/// Parses a checkpoint. When `expected_vocab` is given the stored hash must
/// match it.
pub fn from_bytes(bytes: &[u8], expected_vocab: Option<&[u8; 32]>) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version as u32 != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32("section count")?;
    let mut sections = BTreeMap::new();
    for _ in 0..count {
        let name = r.str("section name")?;
        let len = r.u64("section length")?;
        sections.insert(name, r.take(len, "section payload")?);
    }
    if !r.done() {
        return Err(corrupt("trailing bytes"));
    }
    let section = |name: &str| {
        sections
            .get(name)
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("missing section {name:?}")))
    };

    let text = std::str::from_utf8(section("config")?).map_err(|_| corrupt("config"))?;
    let (variant, config, run_config) = parse_config(text)?;
    let vocab_hash: [u8; 32] = section("vocab_hash")?.try_into().map_err(|_| corrupt("vocab_hash"))?;
    if let Some(expected) = expected_vocab {
        if expected != &vocab_hash {
            return Err(Error::Checkpoint("vocabulary does not match the checkpoint".into()));
        }
    }

    let mut tensors = Vec::new();
    for part in ["encoder", "decoder", "W"] {
        let mut r = Reader { buf: section(part)?, pos: 0 };
        for _ in 0..r.u32(part)? {
            let name = r.str(part)?;
            let rank = r.u32(part)?;
            let shape = (0..rank).map(|_| r.u32(part)).collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| corrupt(part))?;
            let data = r.f32s(n, part)?;
            tensors.push((name, Tensor::new(shape, data).map_err(|_| corrupt(part))?));
        }
        if !r.done() {
            return Err(corrupt(part));
        }
    }

    let memory = match sections.get("memory") {
        Some(buf) => {
            let mut r = Reader { buf, pos: 0 };
            let (m, d) = (r.u32("memory")?, r.u32("memory")?);
            let keys = r.f32s(m * d, "memory keys")?;
            let values = (0..m).map(|_| r.u32("memory values").map(|v| v as u32)).collect::<Result<Vec<_>>>()?;
            let tags = r
                .take(m, "memory tags")?
                .iter()
                .map(|&c| GenderTag::from_code(c).ok_or_else(|| corrupt("memory tag")))
                .collect::<Result<Vec<_>>>()?;
            if !r.done() {
                return Err(corrupt("memory"));
            }
            let keys = Tensor::new(vec![m, d], keys).map_err(|_| corrupt("memory"))?;
            Some(MemoryModule::from_parts(keys, values, tags).map_err(|_| corrupt("memory"))?)
        }
        None => None,
    };

    let mut model = Model::new(variant, config, 0).map_err(|e| Error::Checkpoint(e.to_string()))?;
    model.load_state(tensors, memory)?;
    Ok(Checkpoint {
        model,
        vocab_hash,
        run_config,
    })
}

pub fn load(path: &Path, expected_vocab: Option<&[u8; 32]>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, expected_vocab)
}
