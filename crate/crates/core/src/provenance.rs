//! Audit metadata attached to every artifact: tool version and input digests.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::tokenizer::{format, TokenizerModel};

pub const TOOL_VERSION: &str = concat!("vocab-surgeon ", env!("CARGO_PKG_VERSION"));

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut f = File::open(path)?;
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Digest of a tokenizer's canonical serialization with its provenance
/// block stripped, so re-saving a model does not change it.
pub fn tokenizer_hash(model: &TokenizerModel) -> String {
    let mut bare = model.clone();
    bare.set_provenance(BTreeMap::new());
    sha256_hex(&format::to_bytes(&bare))
}

/// Ordered key/value block; keys of the form `input.<name>` hold digests.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Provenance {
    entries: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new() -> Self {
        let mut entries = BTreeMap::new();
        entries.insert("tool".to_string(), TOOL_VERSION.to_string());
        Self { entries }
    }

    pub fn input_bytes(mut self, name: &str, bytes: &[u8]) -> Self {
        self.entries.insert(format!("input.{name}"), sha256_hex(bytes));
        self
    }

    pub fn input_file(mut self, name: &str, path: &Path) -> Result<Self> {
        self.entries.insert(format!("input.{name}"), sha256_file(path)?);
        Ok(self)
    }

    pub fn set(mut self, key: &str, value: impl Into<String>) -> Self {
        self.entries.insert(key.to_string(), value.into());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn into_map(self) -> BTreeMap<String, String> {
        self.entries
    }

    pub fn as_map(&self) -> &BTreeMap<String, String> {
        &self.entries
    }
}
