//! Container shared by weight files and embedding archives.
//!
//! Layout:
//!
//! ```text
//! b"VCLK" | header_len: u64 LE | header: UTF-8 JSON | blob: f64 LE ...
//! ```
//!
//! The header lists every tensor with its shape and element offset into the
//! blob. Tensors are stored contiguously in manifest order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VCLK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub kind: String,
    #[serde(default)]
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            name: name.into(),
            shape,
            data,
        }
    }
}

pub fn encode(kind: &str, config: serde_json::Value, tensors: &[Tensor]) -> Result<Vec<u8>> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0;
    for t in tensors {
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(Error::BadTensor {
                name: t.name.clone(),
                reason: format!("shape {:?} does not match {} values", t.shape, t.data.len()),
            });
        }
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadTensor {
                name: t.name.clone(),
                reason: "non-finite value".into(),
            });
        }
        entries.push(TensorEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            offset,
        });
        offset += t.data.len();
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        config,
        tensors: entries,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Header(e.to_string()))?;
    let mut out = Vec::with_capacity(12 + json.len() + offset * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], expected_kind: &str) -> Result<(Header, Vec<Tensor>)> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Header("missing VCLK magic".into()));
    }
    let header_len = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if header_len > body.len() {
        return Err(Error::LengthMismatch(format!(
            "header declares {header_len} bytes, file has {}",
            body.len()
        )));
    }
    let header: Header = serde_json::from_slice(&body[..header_len]).map_err(|e| Error::Header(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: header.format_version,
            expected: FORMAT_VERSION,
        });
    }
    if header.kind != expected_kind {
        return Err(Error::Header(format!(
            "expected a `{expected_kind}` file, found `{}`",
            header.kind
        )));
    }
    let blob = &body[header_len..];
    if !blob.len().is_multiple_of(8) {
        return Err(Error::LengthMismatch(format!(
            "blob is {} bytes, not a whole number of f64 values",
            blob.len()
        )));
    }
    let n_values = blob.len() / 8;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    let mut expected_offset = 0usize;
    for entry in &header.tensors {
        let count: usize = entry.shape.iter().product();
        if entry.offset != expected_offset {
            return Err(Error::BadTensor {
                name: entry.name.clone(),
                reason: format!("offset {} breaks contiguity (expected {expected_offset})", entry.offset),
            });
        }
        let end = entry.offset + count;
        if end > n_values {
            return Err(Error::BadTensor {
                name: entry.name.clone(),
                reason: format!(
                    "shape {:?} needs elements {}..{end}, blob holds {n_values}",
                    entry.shape, entry.offset
                ),
            });
        }
        let data: Vec<f64> = blob[entry.offset * 8..end * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadTensor {
                name: entry.name.clone(),
                reason: "non-finite value".into(),
            });
        }
        tensors.push(Tensor::new(entry.name.clone(), entry.shape.clone(), data));
        expected_offset = end;
    }
    if expected_offset != n_values {
        return Err(Error::LengthMismatch(format!(
            "manifest covers {expected_offset} values, blob holds {n_values}"
        )));
    }
    Ok((header, tensors))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Tensor> {
        vec![
            Tensor::new("a", vec![2, 2], vec![1.0, -2.0, 3.5, 0.0]),
            Tensor::new("b", vec![3], vec![1e-300, 7.0, -0.0]),
        ]
    }

    #[test]
    fn roundtrip_bit_exact() {
        let bytes = encode("test", serde_json::json!({"x": 1}), &sample()).unwrap();
        let (h, t) = decode(&bytes, "test").unwrap();
        assert_eq!(h.kind, "test");
        assert_eq!(h.tensors[1].offset, 4);
        for (a, b) in t.iter().zip(sample()) {
            assert_eq!(a.name, b.name);
            let bits_a: Vec<u64> = a.data.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn truncated_blob() {
        let bytes = encode("test", serde_json::Value::Null, &sample()).unwrap();
        let err = decode(&bytes[..bytes.len() - 8], "test").unwrap_err();
        assert!(err.to_string().contains("`b`"), "{err}");
        let err = decode(&bytes[..bytes.len() - 3], "test").unwrap_err();
        assert!(matches!(err, Error::LengthMismatch(_)));
    }

    #[test]
    fn trailing_blob_data() {
        let mut bytes = encode("test", serde_json::Value::Null, &sample()).unwrap();
        bytes.extend_from_slice(&1.0f64.to_le_bytes());
        assert!(matches!(decode(&bytes, "test"), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn shape_exceeds_blob_names_tensor() {
        let bytes = encode("test", serde_json::Value::Null, &sample()).unwrap();
        let header_len = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let mut header: Header = serde_json::from_slice(&bytes[12..12 + header_len]).unwrap();
        header.tensors[0].shape = vec![3, 3];
        header.tensors[1].offset = 9;
        let json = serde_json::to_vec(&header).unwrap();
        let mut forged = MAGIC.to_vec();
        forged.extend_from_slice(&(json.len() as u64).to_le_bytes());
        forged.extend_from_slice(&json);
        forged.extend_from_slice(&bytes[12 + header_len..]);
        let err = decode(&forged, "test").unwrap_err();
        assert!(err.to_string().contains("`a`"), "{err}");
    }

    #[test]
    fn version_and_kind_checked() {
        let bytes = encode("test", serde_json::Value::Null, &sample()).unwrap();
        assert!(decode(&bytes, "other").is_err());
        let header_len = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let text = std::str::from_utf8(&bytes[12..12 + header_len]).unwrap();
        let bumped = text.replace("\"format_version\":1", "\"format_version\":2");
        let mut forged = MAGIC.to_vec();
        forged.extend_from_slice(&(bumped.len() as u64).to_le_bytes());
        forged.extend_from_slice(bumped.as_bytes());
        forged.extend_from_slice(&bytes[12 + header_len..]);
        assert!(matches!(
            decode(&forged, "test"),
            Err(Error::VersionMismatch { found: 2, .. })
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let t = vec![Tensor::new("nan", vec![1], vec![f64::NAN])];
        assert!(encode("test", serde_json::Value::Null, &t).is_err());
        let ok = encode(
            "test",
            serde_json::Value::Null,
            &[Tensor::new("nan", vec![1], vec![1.0])],
        )
        .unwrap();
        let mut bad = ok.clone();
        let n = bad.len();
        bad[n - 8..].copy_from_slice(&f64::INFINITY.to_le_bytes());
        let err = decode(&bad, "test").unwrap_err();
        assert!(err.to_string().contains("`nan`"));
    }
}
