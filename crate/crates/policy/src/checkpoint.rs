//! Binary checkpoint format.
//!
//! Layout: the magic bytes `VMRP`, a little-endian `u32` format version, a
//! little-endian `u32` header length, a JSON header (network config,
//! normalization stats, element type, tensor names and shapes), then every
//! tensor's elements in row-major little-endian order.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::features::NormStats;
use crate::float::Float;
use crate::network::{NetConfig, ParamStore, PolicyNet};
use crate::PolicyError;

const MAGIC: &[u8; 4] = b"VMRP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: [usize; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    dtype: String,
    config: NetConfig,
    norm: NormStats,
    tensors: Vec<TensorMeta>,
}

pub fn to_bytes<T: Float>(net: &PolicyNet<T>) -> Result<Vec<u8>, PolicyError> {
    let header = Header {
        dtype: T::DTYPE.to_string(),
        config: net.config().clone(),
        norm: net.norm.clone(),
        tensors: net
            .params
            .names
            .iter()
            .zip(&net.params.values)
            .map(|(n, v)| TensorMeta { name: n.clone(), shape: [v.nrows(), v.ncols()] })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + net.params.count() * T::BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in &net.params.values {
        for &x in v.iter() {
            x.write_le(&mut out);
        }
    }
    Ok(out)
}

fn bad(msg: impl Into<String>) -> PolicyError {
    PolicyError::Checkpoint(msg.into())
}

/// Parses a checkpoint. Stored elements of another width are converted.
pub fn from_bytes<T: Float>(bytes: &[u8]) -> Result<PolicyNet<T>, PolicyError> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("not a policy checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(12..12 + len).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(bad(format!("unknown element type {other}"))),
    };
    let mut data = &bytes[12 + len..];
    let mut store = ParamStore { names: Vec::new(), values: Vec::new() };
    for t in header.tensors {
        let n = t.shape[0] * t.shape[1];
        if data.len() < n * width {
            return Err(bad(format!("truncated tensor {}", t.name)));
        }
        let (chunk, rest) = data.split_at(n * width);
        data = rest;
        let elems: Vec<T> = chunk
            .chunks_exact(width)
            .map(|c| if width == 4 { T::of(f32::read_le(c) as f64) } else { T::of(f64::read_le(c)) })
            .collect();
        store.names.push(t.name);
        store.values.push(Array2::from_shape_vec((t.shape[0], t.shape[1]), elems).map_err(|e| bad(e.to_string()))?);
    }
    if !data.is_empty() {
        return Err(bad(format!("{} trailing bytes", data.len())));
    }
    PolicyNet::from_parts(header.config, header.norm, store)
}

pub fn save_checkpoint<T: Float>(net: &PolicyNet<T>, path: impl AsRef<Path>) -> Result<(), PolicyError> {
    fs::write(path, to_bytes(net)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Float>(path: impl AsRef<Path>) -> Result<PolicyNet<T>, PolicyError> {
    from_bytes(&fs::read(path)?)
}
