//! Flat parameter storage and the checkpoint file format.
//!
//! A checkpoint is the magic `RANKAUG1`, a little-endian `u64` header length,
//! a UTF-8 JSON header, then every parameter value as a little-endian `f64`
//! in tensor order.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RANKAUG1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(skip)]
    offset: usize,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Named tensors stored back to back in one `Vec<f64>`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    specs: Vec<TensorSpec>,
    data: Vec<f64>,
}

/// Handle to one tensor of a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

impl ParamSet {
    pub fn new(shapes: &[(&str, Vec<usize>)]) -> Self {
        let mut specs = Vec::with_capacity(shapes.len());
        let mut offset = 0;
        for (name, shape) in shapes {
            let spec = TensorSpec {
                name: (*name).to_string(),
                shape: shape.clone(),
                offset,
            };
            offset += spec.numel();
            specs.push(spec);
        }
        ParamSet {
            specs,
            data: vec![0.0; offset],
        }
    }

    fn from_parts(specs: Vec<TensorSpec>, data: Vec<f64>) -> Result<Self> {
        let mut set = ParamSet::new(
            &specs
                .iter()
                .map(|s| (s.name.as_str(), s.shape.clone()))
                .collect::<Vec<_>>(),
        );
        if set.data.len() != data.len() {
            return Err(Error::Checkpoint(format!(
                "header declares {} values, body holds {}",
                set.data.len(),
                data.len()
            )));
        }
        set.data = data;
        Ok(set)
    }

    pub fn id(&self, name: &str) -> Option<TensorId> {
        self.specs.iter().position(|s| s.name == name).map(TensorId)
    }

    pub fn spec(&self, id: TensorId) -> &TensorSpec {
        &self.specs[id.0]
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn range(&self, id: TensorId) -> std::ops::Range<usize> {
        let s = &self.specs[id.0];
        s.offset..s.offset + s.numel()
    }

    pub fn get(&self, id: TensorId) -> &[f64] {
        &self.data[self.range(id)]
    }

    pub fn get_mut(&mut self, id: TensorId) -> &mut [f64] {
        let r = self.range(id);
        &mut self.data[r]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `name[i, j, ..]` for a flat index; used in gradient-check reports.
    pub fn describe(&self, flat: usize) -> String {
        for s in &self.specs {
            if flat >= s.offset && flat < s.offset + s.numel() {
                let mut rem = flat - s.offset;
                let mut idx = vec![0; s.shape.len()];
                for (k, dim) in s.shape.iter().enumerate().rev() {
                    idx[k] = rem % dim;
                    rem /= dim;
                }
                let idx: Vec<String> = idx.iter().map(usize::to_string).collect();
                return format!("{}[{}]", s.name, idx.join(","));
            }
        }
        format!("<out of range {flat}>")
    }

    pub fn fill_uniform(&mut self, rng: &mut impl Rng, bound: f64) {
        for v in &mut self.data {
            *v = rng.gen_range(-bound..bound);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.data.len()]
    }
}

#[derive(Serialize, Deserialize)]
struct Header<M> {
    tensors: Vec<TensorSpec>,
    meta: M,
}

/// Serializes `params` with arbitrary JSON metadata.
pub fn encode_checkpoint<M: Serialize>(params: &ParamSet, meta: &M) -> Result<Vec<u8>> {
    let header = Header {
        tensors: params.specs.clone(),
        meta,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + params.data.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in &params.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint<M: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<(ParamSet, M)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body_start = 16usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: Header<M> =
        serde_json::from_slice(&bytes[16..body_start]).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let body = &bytes[body_start..];
    if body.len() % 8 != 0 {
        return Err(Error::Checkpoint("body is not a whole number of f64".into()));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((ParamSet::from_parts(header.tensors, data)?, header.meta))
}

pub fn save_checkpoint<M: Serialize>(path: impl AsRef<Path>, params: &ParamSet, meta: &M) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(params, meta)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<M: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<(ParamSet, M)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
