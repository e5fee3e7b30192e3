//! Reading inputs and writing artifacts with their provenance.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vocab_surgeon::corpus::Corpus;
use vocab_surgeon::tokenizer::format::{load_tokenizer, save_tokenizer};
use vocab_surgeon::{EmbeddingMatrix, MatrixRole, TokenizerModel};

/// A JSON artifact with a provenance block next to its own fields.
#[derive(Serialize, Deserialize)]
pub struct WithProvenance<T> {
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
    #[serde(flatten)]
    pub inner: T,
}

pub fn open(path: &Path, what: &str) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {what} {}", path.display()))?;
    Ok(BufReader::new(f))
}

pub fn read_tokenizer(path: &Path) -> Result<TokenizerModel> {
    load_tokenizer(open(path, "tokenizer")?).with_context(|| format!("loading tokenizer {}", path.display()))
}

pub fn read_matrix(path: &Path, role: MatrixRole) -> Result<EmbeddingMatrix> {
    let m = EmbeddingMatrix::read_from(open(path, "matrix")?)
        .with_context(|| format!("loading matrix {}", path.display()))?;
    if m.role() != role {
        bail!("{} holds an {:?} matrix, expected {:?}", path.display(), m.role(), role);
    }
    Ok(m)
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let corpus = Corpus::read_jsonl(open(path, "corpus")?).with_context(|| format!("loading corpus {}", path.display()))?;
    for bad in &corpus.skipped {
        log::warn!("{}: skipped line {}: {}", path.display(), bad.line, bad.error);
    }
    if corpus.is_empty() {
        bail!("corpus {} has no usable records", path.display());
    }
    Ok(corpus)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

pub fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> vocab_surgeon::Result<()>,
{
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, provenance: &BTreeMap<String, String>, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(&WithProvenance { provenance: provenance.clone(), inner: value })?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".provenance.json");
    path.with_file_name(name)
}

/// Provenance for formats without room for it (JSONL, CSV, split manifests).
pub fn write_sidecar(path: &Path, provenance: &BTreeMap<String, String>) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(provenance)?;
    bytes.push(b'\n');
    write_bytes(&sidecar_path(path), &bytes)
}

pub fn read_sidecar(path: &Path) -> Result<Option<BTreeMap<String, String>>> {
    let p = sidecar_path(path);
    if !p.exists() {
        return Ok(None);
    }
    let bytes = fs::read(&p).with_context(|| format!("reading {}", p.display()))?;
    Ok(Some(serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", p.display()))?))
}

pub fn write_tokenizer(path: &Path, model: &TokenizerModel) -> Result<()> {
    write_with(path, |w| save_tokenizer(model, w))
}

pub fn write_matrix(path: &Path, m: &EmbeddingMatrix) -> Result<()> {
    write_with(path, |w| m.write_to(w))
}
