//! Versioned named-tensor container.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! "PHONMAP1"            8-byte magic
//! manifest length       u64
//! manifest              UTF-8 JSON
//! payload               raw IEEE-754 f64 values, tensors back to back
//! ```
//!
//! The manifest's `checksum` is SHA-256 over the manifest serialized without
//! that field, followed by the payload, so any modified byte is detected.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::digest::{sha256_hex, sha256_parts};
use crate::error::{CheckpointError, Error, Result};
use crate::inventory::SymbolInventory;
use crate::nn::Tensor;

pub const MAGIC: &[u8; 8] = b"PHONMAP1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    CnnAsr,
    Ptn,
    Embedding,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::CnnAsr => "cnn_asr",
            ModelKind::Ptn => "ptn",
            ModelKind::Embedding => "embedding",
        }
    }
}

/// Provenance stamped into every checkpoint.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub steps: u64,
    pub config_digest: String,
    /// Free-form provenance such as upstream artifact digests.
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub model_config: serde_json::Value,
    pub inventories: BTreeMap<String, SymbolInventory>,
    pub metadata: TrainingMetadata,
    pub tensors: Vec<(String, Tensor)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    kind: ModelKind,
    model_config: serde_json::Value,
    inventories: BTreeMap<String, Vec<String>>,
    /// Blank index per inventory; always the inventory size.
    blank_index: BTreeMap<String, usize>,
    metadata: TrainingMetadata,
    tensors: Vec<TensorEntry>,
    payload_len: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    checksum: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

impl Checkpoint {
    pub fn new(kind: ModelKind, model_config: serde_json::Value, metadata: TrainingMetadata) -> Self {
        Self {
            kind,
            model_config,
            inventories: BTreeMap::new(),
            metadata,
            tensors: Vec::new(),
        }
    }

    pub fn with_inventory(mut self, role: &str, inventory: &SymbolInventory) -> Self {
        self.inventories.insert(role.to_string(), inventory.clone());
        self
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn inventory(&self, role: &str) -> Result<&SymbolInventory> {
        self.inventories
            .get(role)
            .ok_or_else(|| CheckpointError::Manifest(format!("missing `{role}` inventory")).into())
    }

    pub fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(CheckpointError::ModelKind {
                expected: kind.as_str().into(),
                found: self.kind.as_str().into(),
            }
            .into());
        }
        Ok(())
    }

    /// Consumes tensors by name, checking each shape.
    pub fn reader(&self) -> TensorReader<'_> {
        TensorReader {
            tensors: self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, tensor) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: tensor.shape().to_vec(),
                offset: payload.len() as u64,
            });
            payload.extend_from_slice(&tensor.to_le_bytes());
        }
        let mut manifest = Manifest {
            format_version: FORMAT_VERSION,
            kind: self.kind,
            model_config: self.model_config.clone(),
            inventories: self
                .inventories
                .iter()
                .map(|(k, v)| (k.clone(), v.symbols().to_vec()))
                .collect(),
            blank_index: self.inventories.iter().map(|(k, v)| (k.clone(), v.blank())).collect(),
            metadata: self.metadata.clone(),
            tensors: entries,
            payload_len: payload.len() as u64,
            checksum: None,
        };
        let unsigned = serde_json::to_vec(&manifest)?;
        manifest.checksum = Some(sha256_parts([unsigned.as_slice(), payload.as_slice()]));
        let signed = serde_json::to_vec(&manifest)?;

        let mut out = Vec::with_capacity(16 + signed.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(signed.len() as u64).to_le_bytes());
        out.extend_from_slice(&signed);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::BadMagic.into());
        }
        if bytes.len() < 16 {
            return Err(CheckpointError::Truncated("missing manifest length".into()).into());
        }
        let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let manifest_end = usize::try_from(manifest_len)
            .ok()
            .and_then(|n| n.checked_add(16))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| CheckpointError::Truncated("manifest extends past end of file".into()))?;
        let manifest_bytes = &bytes[16..manifest_end];
        let payload = &bytes[manifest_end..];

        let value: serde_json::Value = serde_json::from_slice(manifest_bytes)
            .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
        if let Some(found) = value.get("format_version").and_then(|v| v.as_u64()) {
            if found != u64::from(FORMAT_VERSION) {
                return Err(CheckpointError::VersionMismatch {
                    found: u32::try_from(found).unwrap_or(u32::MAX),
                    expected: FORMAT_VERSION,
                }
                .into());
            }
        }
        let mut manifest: Manifest =
            serde_json::from_value(value).map_err(|e| CheckpointError::Manifest(e.to_string()))?;

        let declared = manifest.payload_len;
        if (payload.len() as u64) < declared {
            return Err(CheckpointError::Truncated(format!(
                "payload has {} of {declared} bytes",
                payload.len()
            ))
            .into());
        }
        if payload.len() as u64 > declared {
            return Err(CheckpointError::TrailingBytes(payload.len() - declared as usize).into());
        }

        let checksum = manifest
            .checksum
            .take()
            .ok_or_else(|| CheckpointError::Manifest("missing checksum".into()))?;
        let unsigned = serde_json::to_vec(&manifest)?;
        if sha256_parts([unsigned.as_slice(), payload]) != checksum {
            return Err(CheckpointError::ChecksumMismatch.into());
        }

        let mut spans: Vec<(u64, u64, &str)> = Vec::with_capacity(manifest.tensors.len());
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for entry in &manifest.tensors {
            let numel: usize = entry.shape.iter().product();
            let end = entry.offset + 8 * numel as u64;
            if end > declared {
                return Err(CheckpointError::Manifest(format!(
                    "tensor `{}` extends past the payload",
                    entry.name
                ))
                .into());
            }
            spans.push((entry.offset, end, &entry.name));
            let data = &payload[entry.offset as usize..end as usize];
            let tensor = Tensor::from_le_bytes(entry.shape.clone(), data)
                .map_err(|e| CheckpointError::Manifest(format!("tensor `{}`: {e}", entry.name)))?;
            tensors.push((entry.name.clone(), tensor));
        }
        spans.sort_unstable();
        for w in spans.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(CheckpointError::Manifest(format!(
                    "tensors `{}` and `{}` overlap",
                    w[0].2, w[1].2
                ))
                .into());
            }
        }

        let mut inventories = BTreeMap::new();
        for (role, symbols) in manifest.inventories {
            let inv = SymbolInventory::new(symbols)
                .map_err(|e| CheckpointError::Manifest(format!("inventory `{role}`: {e}")))?;
            if manifest.blank_index.get(&role) != Some(&inv.blank()) {
                return Err(CheckpointError::Manifest(format!(
                    "inventory `{role}` does not place the blank last"
                ))
                .into());
            }
            inventories.insert(role, inv);
        }

        Ok(Self {
            kind: manifest.kind,
            model_config: manifest.model_config,
            inventories,
            metadata: manifest.metadata,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<String> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(sha256_hex(&bytes))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized file.
    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_bytes()?))
    }

    /// SHA-256 over tensor names, shapes and raw values only.
    pub fn parameter_digest(&self) -> String {
        let mut parts: Vec<Vec<u8>> = Vec::new();
        for (name, t) in &self.tensors {
            parts.push(name.as_bytes().to_vec());
            parts.push(format!("{:?}", t.shape()).into_bytes());
            parts.push(t.to_le_bytes());
        }
        sha256_parts(parts.iter().map(Vec::as_slice))
    }
}

/// Hands out checkpoint tensors by name and verifies that all were used.
pub struct TensorReader<'a> {
    tensors: BTreeMap<&'a str, &'a Tensor>,
}

impl TensorReader<'_> {
    pub fn take(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let t = self
            .tensors
            .remove(name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))?;
        if t.shape() != shape {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                expected: shape.to_vec(),
                found: t.shape().to_vec(),
            }
            .into());
        }
        Ok(t.clone())
    }

    pub fn finish(self) -> Result<()> {
        match self.tensors.keys().next() {
            Some(extra) => Err(CheckpointError::UnexpectedTensor(extra.to_string()).into()),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let inv = SymbolInventory::new(["a", "b"]).unwrap();
        let mut meta = TrainingMetadata {
            seed: 7,
            steps: 12,
            config_digest: "abc".into(),
            ..Default::default()
        };
        meta.extra.insert("note".into(), "x".into());
        let mut ckpt = Checkpoint::new(ModelKind::Ptn, serde_json::json!({"hidden": 4, "rate": 0.4}), meta)
            .with_inventory("source", &inv);
        ckpt.push("w", Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 1e-300, -0.0, 7.0]).unwrap());
        ckpt.push("b", Tensor::vector(vec![1.0, 2.0]).unwrap());
        ckpt
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bytes = sample().to_bytes().unwrap();
        let loaded = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(loaded, sample());
        assert_eq!(loaded.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn every_single_byte_corruption_is_detected() {
        let bytes = sample().to_bytes().unwrap();
        for i in 0..bytes.len() {
            let mut bad = bytes.clone();
            bad[i] ^= 0x01;
            assert!(Checkpoint::from_bytes(&bad).is_err(), "flip at byte {i} went unnoticed");
        }
    }

    #[test]
    fn payload_corruption_is_checksum_error() {
        let mut bytes = sample().to_bytes().unwrap();
        let last = bytes.len() - 3;
        bytes[last] ^= 0x80;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Checkpoint(CheckpointError::ChecksumMismatch))
        ));
    }

    #[test]
    fn truncation_and_trailing_bytes() {
        let bytes = sample().to_bytes().unwrap();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 8]),
            Err(Error::Checkpoint(CheckpointError::Truncated(_)))
        ));
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(
            Checkpoint::from_bytes(&longer),
            Err(Error::Checkpoint(CheckpointError::TrailingBytes(1)))
        ));
        assert!(matches!(
            Checkpoint::from_bytes(b"NOTMAGIC"),
            Err(Error::Checkpoint(CheckpointError::BadMagic))
        ));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let bytes = sample().to_bytes().unwrap();
        let text = String::from_utf8_lossy(&bytes[16..]).to_string();
        let pos = text.find("\"format_version\":1").unwrap() + 16;
        let mut bad = bytes.clone();
        bad[16 + pos + 1] = b'2';
        match Checkpoint::from_bytes(&bad) {
            Err(Error::Checkpoint(CheckpointError::VersionMismatch { found: 2, expected: 1 })) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reader_checks_names_and_shapes() {
        let ckpt = sample();
        let mut r = ckpt.reader();
        assert!(matches!(
            r.take("w", &[3, 2]),
            Err(Error::Checkpoint(CheckpointError::ShapeMismatch { .. }))
        ));
        let mut r = ckpt.reader();
        r.take("w", &[2, 3]).unwrap();
        assert!(matches!(
            r.finish(),
            Err(Error::Checkpoint(CheckpointError::UnexpectedTensor(_)))
        ));
        assert!(matches!(
            ckpt.expect_kind(ModelKind::CnnAsr),
            Err(Error::Checkpoint(CheckpointError::ModelKind { .. }))
        ));
    }
}
