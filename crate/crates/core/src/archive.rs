//! Embedding archives: named embedding vectors in the weight-file container.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::Embedding;
use crate::error::{Error, Result};
use crate::metrics::EmbeddingMap;
use crate::tensorfile::{self, Tensor};

const ARCHIVE_KIND: &str = "embeddings";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArchiveConfig {
    embed_dim: usize,
    count: usize,
}

/// Serializes `map` in key order; every embedding must have the same length.
pub fn encode_archive(map: &EmbeddingMap) -> Result<Vec<u8>> {
    let embed_dim = map.values().next().map_or(0, Embedding::len);
    let mut tensors = Vec::with_capacity(map.len());
    for (key, e) in map {
        if e.len() != embed_dim {
            return Err(Error::BadTensor {
                name: key.clone(),
                reason: format!("length {} differs from {embed_dim}", e.len()),
            });
        }
        tensors.push(Tensor::new(key.clone(), vec![e.len()], e.values().to_vec()));
    }
    let config = serde_json::to_value(ArchiveConfig {
        embed_dim,
        count: map.len(),
    })
    .map_err(|e| Error::Header(e.to_string()))?;
    tensorfile::encode(ARCHIVE_KIND, config, &tensors)
}

pub fn decode_archive(bytes: &[u8]) -> Result<EmbeddingMap> {
    let (header, tensors) = tensorfile::decode(bytes, ARCHIVE_KIND)?;
    let config: ArchiveConfig =
        serde_json::from_value(header.config).map_err(|e| Error::Header(format!("config: {e}")))?;
    if config.count != tensors.len() {
        return Err(Error::LengthMismatch(format!(
            "archive declares {} embeddings, manifest lists {}",
            config.count,
            tensors.len()
        )));
    }
    let mut map = EmbeddingMap::new();
    for t in tensors {
        if t.shape != [config.embed_dim] {
            return Err(Error::BadTensor {
                name: t.name,
                reason: format!("shape {:?}, expected [{}]", t.shape, config.embed_dim),
            });
        }
        if map.contains_key(&t.name) {
            return Err(Error::DuplicateKey(t.name));
        }
        map.insert(t.name, Embedding::new(t.data));
    }
    Ok(map)
}

pub fn save_archive(map: &EmbeddingMap, path: impl AsRef<Path>) -> Result<()> {
    tensorfile::write_file(path.as_ref(), &encode_archive(map)?)
}

pub fn load_archive(path: impl AsRef<Path>) -> Result<EmbeddingMap> {
    decode_archive(&tensorfile::read_file(path.as_ref())?)
}

/// Archive key for an audio path: its file stem.
pub fn key_for_path(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .ok_or_else(|| Error::InvalidConfig(format!("no usable file stem in {}", path.display())))
}

/// Inserts `(key, embedding)` pairs, rejecting repeated keys.
pub fn collect_unique(pairs: impl IntoIterator<Item = (String, Embedding)>) -> Result<EmbeddingMap> {
    let mut map = EmbeddingMap::new();
    for (k, e) in pairs {
        if map.contains_key(&k) {
            return Err(Error::DuplicateKey(k));
        }
        map.insert(k, e);
    }
    Ok(map)
}
