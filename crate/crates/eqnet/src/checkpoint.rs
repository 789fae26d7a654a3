//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `EQNETCK1`, a little-endian `u64` header length,
//! a JSON header, then every tensor as little-endian `f32` in header order.
//! Adam moments follow the parameters when present.

use std::path::Path;

use eqnet_core::transformer::{AdamState, ModelConfig, TrainConfig, TransformerParams};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

const MAGIC: &[u8; 8] = b"EQNETCK1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub max_node: u32,
    pub step: usize,
    pub tensors: Vec<TensorEntry>,
    pub has_adam: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: TransformerParams<f32>,
    pub adam: Option<AdamState<f32>>,
    pub train: TrainConfig,
    pub max_node: u32,
}

impl Checkpoint {
    pub fn step(&self) -> usize {
        self.adam.as_ref().map_or(0, |a| a.step)
    }
}

fn push_tensors(buf: &mut Vec<u8>, p: &TransformerParams<f32>) {
    for (_, t) in p.tensors() {
        for x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let header = CheckpointHeader {
        model: ck.params.config.clone(),
        train: ck.train.clone(),
        max_node: ck.max_node,
        step: ck.step(),
        tensors: ck
            .params
            .tensors()
            .into_iter()
            .map(|(name, t)| TensorEntry {
                name,
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect(),
        has_adam: ck.adam.is_some(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut buf = Vec::with_capacity(16 + json.len() + 12 * ck.params.parameter_count());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    push_tensors(&mut buf, &ck.params);
    if let Some(a) = &ck.adam {
        push_tensors(&mut buf, &a.m);
        push_tensors(&mut buf, &a.v);
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn fill(&mut self, p: &mut TransformerParams<f32>) -> Option<()> {
        for (_, t) in p.tensors_mut() {
            let raw = self.take(4 * t.len())?;
            for (x, c) in t.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
                *x = f32::from_le_bytes(c.try_into().ok()?);
            }
        }
        Some(())
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |m: &str| Error::Checkpoint {
        path: path.to_path_buf(),
        message: m.to_string(),
    };
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8) != Some(MAGIC.as_slice()) {
        return Err(bad("missing magic"));
    }
    let len = r
        .take(8)
        .map(|b| u64::from_le_bytes(b.try_into().unwrap()) as usize)
        .ok_or_else(|| bad("truncated header"))?;
    let json = r.take(len).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(json).map_err(|e| bad(&format!("header: {e}")))?;
    header.model.validate()?;
    let mut params = TransformerParams::<f32>::init_shapes(&header.model);
    let shapes: Vec<TensorEntry> = params
        .tensors()
        .into_iter()
        .map(|(name, t)| TensorEntry {
            name,
            rows: t.rows(),
            cols: t.cols(),
        })
        .collect();
    if shapes != header.tensors {
        return Err(bad("tensor table does not match the model configuration"));
    }
    r.fill(&mut params).ok_or_else(|| bad("truncated parameters"))?;
    let adam = if header.has_adam {
        let mut m = params.zeros_like();
        let mut v = params.zeros_like();
        r.fill(&mut m).ok_or_else(|| bad("truncated optimizer state"))?;
        r.fill(&mut v).ok_or_else(|| bad("truncated optimizer state"))?;
        Some(AdamState { m, v, step: header.step })
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(Checkpoint {
        params,
        adam,
        train: header.train,
        max_node: header.max_node,
    })
}

pub fn save(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode(ck))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    decode(&bytes, path)
}
