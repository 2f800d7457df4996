//! Named-tensor checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! [u64 header_len][header_len bytes of JSON header][tensor payload]
//! ```
//!
//! The header lists every tensor as `{name, shape, dtype, offset}` with
//! `offset` relative to the start of the payload, plus a free-form
//! `metadata` object.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{DType, Float, Tensor};
use crate::error::{Error, Result};

const MAGIC: &str = "todyformer-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    magic: String,
    format_version: u32,
    tensors: Vec<CheckpointEntry>,
    metadata: serde_json::Value,
}

/// Decoded checkpoint contents.
#[derive(Debug, Clone)]
pub struct CheckpointFile<F> {
    pub tensors: Vec<(String, Tensor<F>)>,
    pub metadata: serde_json::Value,
}

pub fn write_checkpoint<F: Float, W: Write>(
    out: &mut W,
    tensors: &[(&str, &Tensor<F>)],
    metadata: serde_json::Value,
) -> Result<()> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut payload = Vec::new();
    for (name, t) in tensors {
        entries.push(CheckpointEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype: F::DTYPE,
            offset: payload.len() as u64,
        });
        for &v in t.data() {
            v.write_le(&mut payload);
        }
    }
    let header = serde_json::to_vec(&Header {
        magic: MAGIC.into(),
        format_version: FORMAT_VERSION,
        tensors: entries,
        metadata,
    })?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    out.write_all(&payload)?;
    Ok(())
}

pub fn read_checkpoint<F: Float, R: Read>(input: &mut R) -> Result<CheckpointFile<F>> {
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let header_len = u64::from_le_bytes(len) as usize;
    let mut header = vec![0u8; header_len];
    input.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)
        .map_err(|e| Error::Version(format!("unreadable checkpoint header: {e}")))?;
    if header.magic != MAGIC {
        return Err(Error::Version(format!("not a checkpoint (magic {:?})", header.magic)));
    }
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Version(format!(
            "checkpoint format {} but this build reads {FORMAT_VERSION}",
            header.format_version
        )));
    }
    let mut payload = Vec::new();
    input.read_to_end(&mut payload)?;

    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        if e.dtype != F::DTYPE {
            return Err(Error::Version(format!(
                "tensor {} stored as {:?}, requested {:?}",
                e.name,
                e.dtype,
                F::DTYPE
            )));
        }
        let width = e.dtype.size_of();
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + n * width;
        let bytes = payload
            .get(start..end)
            .ok_or_else(|| Error::Version(format!("tensor {} truncated", e.name)))?;
        let data = bytes.chunks_exact(width).map(F::read_le).collect();
        tensors.push((e.name, Tensor::new(&e.shape, data)?));
    }
    Ok(CheckpointFile {
        tensors,
        metadata: header.metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_bits() {
        let a = Tensor::<f32>::from_f64(&[2, 2], &[1.0, -0.5, 3.25, 1e-7]).unwrap();
        let b = Tensor::<f32>::from_f64(&[3], &[0.1, 0.2, 0.3]).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[("a", &a), ("b", &b)], serde_json::json!({"epoch": 3})).unwrap();
        let back: CheckpointFile<f32> = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back.tensors[0], ("a".to_string(), a));
        assert_eq!(back.tensors[1], ("b".to_string(), b));
        assert_eq!(back.metadata["epoch"], 3);
    }

    #[test]
    fn header_offsets_are_little_endian_layout() {
        let a = Tensor::<f64>::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[("w", &a)], serde_json::Value::Null).unwrap();
        let header_len = u64::from_le_bytes(buf[..8].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&buf[8..8 + header_len]).unwrap();
        assert_eq!(header["tensors"][0]["dtype"], "f64");
        assert_eq!(header["tensors"][0]["offset"], 0);
        let payload = &buf[8 + header_len..];
        assert_eq!(f64::from_le_bytes(payload[8..16].try_into().unwrap()), 2.0);
    }

    #[test]
    fn dtype_mismatch_is_version_error() {
        let a = Tensor::<f32>::zeros(&[1]);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[("a", &a)], serde_json::Value::Null).unwrap();
        let err = read_checkpoint::<f64, _>(&mut buf.as_slice()).unwrap_err();
        assert!(matches!(err, Error::Version(_)));
    }
}
