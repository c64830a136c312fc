//! Checkpoint directories: `manifest.json` plus a `tensors.itns` payload of
//! concatenated `ITNS` records.
//!
//! The manifest lists each tensor's name, byte offset and shape, the SHA-256
//! of the payload, and a free-form `meta` object. Loading refuses a payload
//! whose hash does not match.

use std::collections::HashMap;
use std::fs;
use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{NnError, Result};
use crate::tensor::{itns_len, read_itns, write_itns, Tensor};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAYLOAD_FILE: &str = "tensors.itns";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Entry {
    pub name: String,
    pub offset: u64,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub version: u32,
    pub payload_sha256: String,
    pub entries: Vec<Entry>,
    pub meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub meta: serde_json::Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Self { tensors: Vec::new(), meta }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Encoded manifest and payload.
    pub fn encode(&self) -> Result<(Vec<u8>, Vec<u8>)> {
        let mut payload = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            entries.push(Entry { name: name.clone(), offset: payload.len() as u64, shape: t.shape().to_vec() });
            write_itns(&mut payload, t)?;
        }
        let manifest = Manifest {
            version: FORMAT_VERSION,
            payload_sha256: sha256_hex(&payload),
            entries,
            meta: self.meta.clone(),
        };
        let mut text = serde_json::to_vec_pretty(&manifest).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        text.push(b'\n');
        Ok((text, payload))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let (manifest, payload) = self.encode()?;
        fs::create_dir_all(dir)?;
        fs::write(dir.join(PAYLOAD_FILE), payload)?;
        fs::write(dir.join(MANIFEST_FILE), manifest)?;
        Ok(())
    }

    pub fn decode(manifest: &[u8], payload: &[u8]) -> Result<Self> {
        let m: Manifest =
            serde_json::from_slice(manifest).map_err(|e| NnError::Checkpoint(format!("manifest: {e}")))?;
        if m.version != FORMAT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {}", m.version)));
        }
        let actual = sha256_hex(payload);
        if actual != m.payload_sha256 {
            return Err(NnError::Checkpoint(format!(
                "payload hash mismatch: manifest {}, file {actual}",
                m.payload_sha256
            )));
        }
        let mut seen = HashMap::new();
        let mut tensors = Vec::with_capacity(m.entries.len());
        for e in &m.entries {
            if seen.insert(e.name.clone(), ()).is_some() {
                return Err(NnError::Checkpoint(format!("duplicate entry `{}`", e.name)));
            }
            let start = e.offset as usize;
            let end = start + itns_len(&e.shape);
            if end > payload.len() {
                return Err(NnError::Checkpoint(format!("entry `{}` out of bounds", e.name)));
            }
            let t = read_itns(&mut Cursor::new(&payload[start..end]))?;
            if t.shape() != e.shape.as_slice() {
                return Err(NnError::Checkpoint(format!("entry `{}` shape disagrees with manifest", e.name)));
            }
            tensors.push((e.name.clone(), t));
        }
        Ok(Self { tensors, meta: m.meta })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = fs::read(dir.join(MANIFEST_FILE))?;
        let payload = fs::read(dir.join(PAYLOAD_FILE))?;
        Self::decode(&manifest, &payload)
    }
}
