//! Binary checkpoint file.
//!
//! ```text
//! "DIINCKPT"                      8 bytes
//! version                         u32 LE
//! tensor count                    u32 LE
//! per tensor:
//!   name length                   u16 LE
//!   name                          UTF-8
//!   rank                          u8
//!   dims                          u32 LE each
//!   values                        f32 LE, row-major
//! state length                    u64 LE
//! state                           UTF-8 TOML with tables [state], [config], [vocab]
//! ```
//!
//! Model tensors use their parameter names; optimizer slots are stored as
//! `optim/<param>/<slot>`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::model::Diin;
use crate::optim::{Optimizer, PlateauTracker};
use crate::text::{Index, Vocab};
use crate::train::config::TrainConfig;

pub const MAGIC: &[u8; 8] = b"DIINCKPT";
pub const VERSION: u32 = 1;
const SLOT_PREFIX: &str = "optim/";

/// Loop position and bookkeeping; together with the parameters and slots
/// it determines the rest of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainState {
    pub step: u64,
    pub epoch: u64,
    /// Examples of the current epoch's permutation already consumed.
    pub cursor: usize,
    /// Index into the configured stage list.
    pub stage: usize,
    pub optimizer_steps: u64,
    pub plateau: PlateauTracker,
    pub best_accuracy: Option<f64>,
    pub best_step: Option<u64>,
    pub next_eval: u64,
    pub evals: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabDump {
    words: Vec<String>,
    chars: Vec<String>,
    pos: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Blob {
    state: TrainState,
    config: TrainConfig,
    vocab: VocabDump,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub state: TrainState,
    pub config: TrainConfig,
    pub vocab: Vocab,
}

impl Checkpoint {
    pub fn capture(
        model: &Diin<f32>,
        optimizer: Option<&Optimizer>,
        state: &TrainState,
        config: &TrainConfig,
        vocab: &Vocab,
    ) -> Self {
        let mut tensors: Vec<(String, Tensor<f32>)> = model
            .params()
            .iter()
            .map(|(_, p)| (p.name.clone(), p.value.clone()))
            .collect();
        if let Some(o) = optimizer {
            tensors.extend(o.slot_tensors());
        }
        Checkpoint {
            tensors,
            state: state.clone(),
            config: config.clone(),
            vocab: vocab.clone(),
        }
    }

    /// Rebuild the model described by the stored config and fill it from
    /// the stored tensors, which must match it name for name and shape for
    /// shape.
    pub fn model(&self) -> Result<Diin<f32>> {
        let mut model = Diin::<f32>::new(self.config.model.clone(), 0).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let stored: Vec<&(String, Tensor<f32>)> = self
            .tensors
            .iter()
            .filter(|(n, _)| !n.starts_with(SLOT_PREFIX))
            .collect();
        let store = model.params_mut();
        if stored.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "{} model tensors stored, config defines {}",
                stored.len(),
                store.len()
            )));
        }
        for (name, t) in stored {
            let id = store.id(name).ok_or_else(|| {
                Error::Checkpoint(format!("tensor `{name}` is not a parameter of the configured model"))
            })?;
            let p = store.get_mut(id);
            if p.value.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, config expects {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(model)
    }

    pub fn optimizer_slots(&self) -> Vec<(String, Tensor<f32>)> {
        self.tensors
            .iter()
            .filter(|(n, _)| n.starts_with(SLOT_PREFIX))
            .cloned()
            .collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let blob = Blob {
            state: self.state.clone(),
            config: self.config.clone(),
            vocab: VocabDump {
                words: self.vocab.words.items().to_vec(),
                chars: self.vocab.chars.items().to_vec(),
                pos: self.vocab.pos.items().to_vec(),
            },
        };
        let text = toml::to_string(&blob).expect("state is always representable");
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = u16::from_le_bytes(r.array()?) as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint(format!("tensor name at byte {} is not UTF-8", r.at - len)))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel.checked_mul(4).ok_or_else(|| r.truncated())?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(&shape, data).map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))?;
            tensors.push((name, t));
        }
        let len = u64::from_le_bytes(r.array()?) as usize;
        let text =
            std::str::from_utf8(r.take(len)?).map_err(|_| Error::Checkpoint("state blob is not UTF-8".into()))?;
        if r.at != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        let blob: Blob = toml::from_str(text).map_err(|e| Error::Checkpoint(format!("state blob: {e}")))?;
        let vocab = Vocab::from_parts(
            Index::from_items(blob.vocab.words),
            Index::from_items(blob.vocab.chars),
            Index::from_items(blob.vocab.pos),
        );
        Ok(Checkpoint {
            tensors,
            state: blob.state,
            config: blob.config,
            vocab,
        })
    }

    /// Write atomically (temporary file, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.encode()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn truncated(&self) -> Error {
        Error::Checkpoint(format!("file truncated at byte {}", self.bytes.len()))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| self.truncated())?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
}
