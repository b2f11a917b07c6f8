//! `TMCW` weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     "TMCW"
//! version   u16
//! count     u32
//! count × { name_len u16, name (UTF-8), rank u8, dims u32 × rank,
//!           data f32 × product(dims), row-major }
//! crc32     u32 over every preceding byte
//! ```

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use thiserror::Error;

use super::Model;
use crate::tensor::Tensor;

pub const WEIGHT_MAGIC: &[u8; 4] = b"TMCW";
pub const WEIGHT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum WeightError {
    #[error("not a weight file: magic {0:?}")]
    Magic(Vec<u8>),
    #[error("unsupported weight file version {0}")]
    Version(u16),
    #[error("weight file truncated at byte {0}")]
    Truncated(usize),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("{0} trailing bytes after checksum")]
    Trailing(usize),
    #[error("tensor name is not valid UTF-8")]
    Utf8,
    #[error("tensor {0:?} appears twice")]
    Duplicate(String),
    #[error("tensor {0:?} has a zero dimension")]
    ZeroDim(String),
    #[error("tensor {name:?}: name longer than {max} bytes", max = u16::MAX)]
    NameTooLong { name: String },
    #[error("tensor {name:?}: file shape {file:?} does not match model shape {model:?}")]
    Shape {
        name: String,
        file: Vec<usize>,
        model: Vec<usize>,
    },
    #[error("weight file does not fit this model: {}", describe_diff(unexpected, missing))]
    Names {
        unexpected: Vec<String>,
        missing: Vec<String>,
    },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

fn describe_diff(unexpected: &[String], missing: &[String]) -> String {
    let list = |names: &[String]| {
        let shown: Vec<&str> = names.iter().take(8).map(String::as_str).collect();
        let more = names.len().saturating_sub(shown.len());
        if more > 0 {
            format!("{} (+{more} more)", shown.join(", "))
        } else {
            shown.join(", ")
        }
    };
    let mut parts = Vec::new();
    if !unexpected.is_empty() {
        parts.push(format!("{} tensors not in model: {}", unexpected.len(), list(unexpected)));
    }
    if !missing.is_empty() {
        parts.push(format!("{} model tensors missing from file: {}", missing.len(), list(missing)));
    }
    parts.join("; ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Outcome of loading a weight file into a model.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    /// Head tensors present in the file whose shapes differ from the model.
    pub skipped: Vec<String>,
    /// Model tensors the file did not provide (head tensors only).
    pub untouched: Vec<String>,
}

pub fn encode_weights(m: &Model) -> Result<Vec<u8>, WeightError> {
    let params = m.params();
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHT_MAGIC);
    out.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        let name = p.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| WeightError::NameTooLong {
            name: p.name.clone(),
        })?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        let shape = p.value.shape();
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(WeightError::Truncated(self.bytes.len()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WeightError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WeightError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WeightError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parses and verifies a weight file, widening values to `f64`.
pub fn decode_weights(bytes: &[u8]) -> Result<Vec<NamedTensor>, WeightError> {
    if bytes.len() < 4 || &bytes[..4] != WEIGHT_MAGIC {
        return Err(WeightError::Magic(bytes.iter().take(4).copied().collect()));
    }
    if bytes.len() < 14 {
        return Err(WeightError::Truncated(bytes.len()));
    }
    let (payload, stored) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(stored.try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(WeightError::Checksum { stored, computed });
    }
    let mut r = Reader {
        bytes: payload,
        pos: 4,
    };
    let version = r.u16()?;
    if version != WEIGHT_VERSION {
        return Err(WeightError::Version(version));
    }
    let count = r.u32()?;
    let mut seen = HashSet::new();
    let mut tensors = Vec::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| WeightError::Utf8)?
            .to_string();
        let rank = r.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        if dims.contains(&0) {
            return Err(WeightError::ZeroDim(name));
        }
        let elements = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or(WeightError::Truncated(payload.len()))?;
        let data = r
            .take(elements)?
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        if !seen.insert(name.clone()) {
            return Err(WeightError::Duplicate(name));
        }
        let tensor = Tensor::from_vec(&dims, data).expect("length checked above");
        tensors.push(NamedTensor { name, tensor });
    }
    if r.pos != payload.len() {
        return Err(WeightError::Trailing(payload.len() - r.pos));
    }
    Ok(tensors)
}

pub fn save_weights(m: &Model, path: &Path) -> Result<(), WeightError> {
    let bytes = encode_weights(m)?;
    fs::write(path, bytes).map_err(|source| WeightError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Copies matching tensors from `tensors` into `m`.
///
/// Every file tensor must name a model parameter. Base parameters must all
/// be present with identical shapes; head parameters may be absent or
/// differently shaped, in which case they are left untouched and reported.
/// On error the model is unchanged.
pub fn apply_weights(m: &mut Model, tensors: Vec<NamedTensor>) -> Result<LoadReport, WeightError> {
    let head_names: HashSet<String> = m.head_params().iter().map(|p| p.name.clone()).collect();
    let model_shapes: HashMap<String, Vec<usize>> = m
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.value.shape().to_vec()))
        .collect();
    let mut unexpected = Vec::new();
    let mut report = LoadReport::default();
    let mut accepted = HashMap::new();
    for nt in tensors {
        match model_shapes.get(&nt.name) {
            None => unexpected.push(nt.name),
            Some(shape) if shape.as_slice() == nt.tensor.shape() => {
                accepted.insert(nt.name, nt.tensor);
            }
            Some(shape) if head_names.contains(&nt.name) => {
                let _ = shape;
                report.skipped.push(nt.name);
            }
            Some(shape) => {
                return Err(WeightError::Shape {
                    name: nt.name,
                    file: nt.tensor.shape().to_vec(),
                    model: shape.clone(),
                })
            }
        }
    }
    let missing: Vec<String> = m
        .base_params()
        .iter()
        .filter(|p| !accepted.contains_key(&p.name))
        .map(|p| p.name.clone())
        .collect();
    if !unexpected.is_empty() || !missing.is_empty() {
        return Err(WeightError::Names {
            unexpected,
            missing,
        });
    }
    for p in m.params_mut() {
        match accepted.remove(&p.name) {
            Some(t) => {
                p.value = t;
                report.loaded.push(p.name.clone());
            }
            None => report.untouched.push(p.name.clone()),
        }
    }
    Ok(report)
}

pub fn load_weights(m: &mut Model, path: &Path) -> Result<LoadReport, WeightError> {
    let bytes = fs::read(path).map_err(|source| WeightError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    apply_weights(m, decode_weights(&bytes)?)
}
