//! Dense row-major embedding matrices and their binary file format.
//!
//! Layout: the 8-byte magic `VSEMB01\n`, one JSON header line
//! `{"rows":R,"cols":C,"dtype":"f32le","role":"embedding"}`, then `R * C`
//! little-endian `f32` values in row-major order.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"VSEMB01\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixRole {
    Embedding,
    Unembedding,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    rows: usize,
    cols: usize,
    dtype: String,
    role: MatrixRole,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    provenance: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    role: MatrixRole,
    pub provenance: BTreeMap<String, String>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>, role: MatrixRole) -> Result<Self> {
        if cols == 0 {
            return Err(Error::Embedding("hidden dimension must be positive".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::Embedding(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Embedding(format!(
                "non-finite value at row {}, col {}",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, data, role, provenance: BTreeMap::new() })
    }

    pub fn zeros(rows: usize, cols: usize, role: MatrixRole) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols], role).expect("zero matrix is valid")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn role(&self) -> MatrixRole {
        self.role
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Grow to `rows` rows, zero-filling the new ones.
    pub fn resize_rows(&mut self, rows: usize) {
        self.data.resize(rows * self.cols, 0.0);
        self.rows = rows;
    }

    /// L2 norm of every row, accumulated in f64.
    pub fn row_norms(&self) -> Vec<f64> {
        self.data
            .chunks_exact(self.cols)
            .map(|r| r.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt())
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        let header = Header {
            rows: self.rows,
            cols: self.cols,
            dtype: "f32le".into(),
            role: self.role,
            provenance: self.provenance.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Embedding("file too short for magic".into()))?;
        if &magic != MAGIC {
            return Err(Error::Embedding("bad magic".into()));
        }
        let mut line = Vec::new();
        r.read_until(b'\n', &mut line)?;
        let header: Header = serde_json::from_slice(&line)
            .map_err(|e| Error::Embedding(format!("bad header: {e}")))?;
        if header.dtype != "f32le" {
            return Err(Error::Embedding(format!("unsupported dtype {}", header.dtype)));
        }
        let count = header.rows.checked_mul(header.cols).ok_or_else(|| {
            Error::Embedding("matrix dimensions overflow".into())
        })?;
        let mut raw = Vec::with_capacity(count * 4);
        r.read_to_end(&mut raw)?;
        if raw.len() != count * 4 {
            return Err(Error::Embedding(format!(
                "expected {} data bytes, found {}",
                count * 4,
                raw.len()
            )));
        }
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut m = Self::new(header.rows, header.cols, data, header.role)?;
        m.provenance = header.provenance;
        Ok(m)
    }
}
