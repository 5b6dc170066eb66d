//! Binary checkpoint container.
//!
//! ```text
//! magic        4 bytes  "LNTN"
//! version      u32
//! header_len   u32
//! header       JSON: {"model": LanternConfig, "variant": .., "train": TrainConfig, "adam_step": u64}
//! n_entries    u32
//! entries      name_len u32, name (UTF-8), dtype u8, rank u32, dims u64 x rank, data
//! ```
//!
//! All integers and floats are little-endian. Entries hold the parameters
//! under their own names, then Adam moments under `adam.m/<name>` and
//! `adam.v/<name>`. The only dtype is `1` (f64).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::config::TrainConfig;
use crate::autodiff::Tensor;
use crate::error::{CheckpointError, Error, Result};
use crate::model::{param_specs, Lantern, LanternConfig, LanternParams, Variant};

pub const MAGIC: [u8; 4] = *b"LNTN";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;
const FIRST_MOMENT: &str = "adam.m/";
const SECOND_MOMENT: &str = "adam.v/";

#[derive(Serialize, Deserialize)]
struct Header {
    model: LanternConfig,
    variant: Variant,
    train: TrainConfig,
    adam_step: u64,
}

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Lantern,
    pub train_config: TrainConfig,
    pub adam: AdamState,
}

fn put_entry(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(DTYPE_F64);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Serialises a checkpoint. Byte-stable for identical inputs.
pub fn checkpoint_bytes(model: &Lantern, adam: &AdamState, train: &TrainConfig) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        model: model.config.clone(),
        variant: model.variant,
        train: train.clone(),
        adam_step: adam.step,
    })
    .map_err(|e| Error::Invariant {
        invariant: "checkpoint_header",
        detail: e.to_string(),
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);

    let n_entries = model.params.len() + adam.first.len() + adam.second.len();
    out.extend_from_slice(&(n_entries as u32).to_le_bytes());
    for (name, t) in model.params.iter() {
        put_entry(&mut out, name, t.shape(), t.data());
    }
    for (prefix, moments) in [(FIRST_MOMENT, &adam.first), (SECOND_MOMENT, &adam.second)] {
        for (name, m) in moments {
            let shape = model.params.get(name).map_or_else(|| vec![m.len()], |t| t.shape().to_vec());
            put_entry(&mut out, &format!("{prefix}{name}"), &shape, m);
        }
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, model: &Lantern, adam: &AdamState, train: &TrainConfig) -> Result<()> {
    let bytes = checkpoint_bytes(model, adam, train)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, context: &str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated {
                context: context.to_string(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, context: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, context)?.try_into().unwrap()))
    }

    fn u64(&mut self, context: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, context)?.try_into().unwrap()))
    }
}

fn read_entry(r: &mut Reader<'_>, index: usize) -> Result<(String, Tensor), CheckpointError> {
    let ctx = |what: &str| format!("entry {index} {what}");
    let name_len = r.u32(&ctx("name length"))? as usize;
    let name = std::str::from_utf8(r.take(name_len, &ctx("name"))?)
        .map_err(|_| CheckpointError::Corrupt(format!("entry {index} name is not UTF-8")))?
        .to_string();
    let ctx = |what: &str| format!("`{name}` {what}");
    let dtype = r.take(1, &ctx("dtype"))?[0];
    if dtype != DTYPE_F64 {
        return Err(CheckpointError::Corrupt(format!("`{name}` has unknown dtype {dtype}")));
    }
    let rank = r.u32(&ctx("rank"))? as usize;
    let mut shape = Vec::with_capacity(rank.min(8));
    for _ in 0..rank {
        shape.push(r.u64(&ctx("shape"))? as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n > 0 && rank > 0)
        .ok_or_else(|| CheckpointError::Corrupt(format!("`{name}` has invalid shape {shape:?}")))?;
    let bytes_needed = n
        .checked_mul(8)
        .ok_or_else(|| CheckpointError::Corrupt(format!("`{name}` is too large")))?;
    let raw = r.take(bytes_needed, &ctx("data"))?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    Ok((name, t))
}

/// Parses and validates a checkpoint produced by [`checkpoint_bytes`].
pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic { found: magic }.into());
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        }
        .into());
    }
    let header_len = r.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len, "header")?)
        .map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
    header
        .model
        .validate()
        .map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;

    let n_entries = r.u32("entry count")? as usize;
    let mut params = BTreeMap::new();
    let mut first = BTreeMap::new();
    let mut second = BTreeMap::new();
    for i in 0..n_entries {
        let (name, t) = read_entry(&mut r, i)?;
        let (map, key) = if let Some(k) = name.strip_prefix(FIRST_MOMENT) {
            (&mut first, k.to_string())
        } else if let Some(k) = name.strip_prefix(SECOND_MOMENT) {
            (&mut second, k.to_string())
        } else {
            (&mut params, name.clone())
        };
        if map.insert(key, t).is_some() {
            return Err(CheckpointError::Corrupt(format!("duplicate entry `{name}`")).into());
        }
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)).into());
    }

    let specs = param_specs(&header.model, header.variant);
    if specs.len() != params.len() {
        return Err(CheckpointError::Corrupt(format!(
            "expected {} parameter tensors, found {}",
            specs.len(),
            params.len()
        ))
        .into());
    }
    for spec in &specs {
        match params.get(&spec.name) {
            Some(t) if t.shape() == spec.shape.as_slice() => {}
            Some(t) => {
                return Err(CheckpointError::Corrupt(format!(
                    "`{}` has shape {:?}, config implies {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                ))
                .into())
            }
            None => return Err(CheckpointError::Corrupt(format!("missing parameter `{}`", spec.name)).into()),
        }
    }
    let moments = |m: BTreeMap<String, Tensor>, which: &str| -> Result<BTreeMap<String, Vec<f64>>> {
        let mut out = BTreeMap::new();
        for (name, t) in m {
            match params.get(&name) {
                Some(p) if p.shape() == t.shape() => {
                    out.insert(name, t.into_data());
                }
                _ => {
                    return Err(CheckpointError::Corrupt(format!(
                        "{which} moment `{name}` does not match a parameter"
                    ))
                    .into())
                }
            }
        }
        Ok(out)
    };
    let adam = AdamState {
        step: header.adam_step,
        first: moments(first, "first")?,
        second: moments(second, "second")?,
    };
    Ok(Checkpoint {
        model: Lantern {
            config: header.model,
            variant: header.variant,
            params: LanternParams::from_tensors(params),
        },
        train_config: header.train,
        adam,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}
