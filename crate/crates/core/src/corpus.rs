//! Paired-document corpora: JSON Lines with one `{"id","sd","rs"}` record per line.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub sd: String,
    pub rs: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BadLine {
    pub line: usize,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub records: Vec<Record>,
    /// Lines that could not be parsed, 1-based.
    pub skipped: Vec<BadLine>,
}

impl Corpus {
    pub fn from_records(records: Vec<Record>) -> Result<Self> {
        check_unique(&records)?;
        Ok(Self { records, skipped: Vec::new() })
    }

    /// Read records, skipping (and recording) malformed lines. Blank lines are ignored.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut records = Vec::new();
        let mut skipped = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Record>(&line) {
                Ok(rec) => records.push(rec),
                Err(e) => {
                    log::warn!("corpus line {}: {e}", n + 1);
                    skipped.push(BadLine { line: n + 1, error: e.to_string() });
                }
            }
        }
        check_unique(&records)?;
        Ok(Self { records, skipped })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.sd.as_str())
    }

    pub fn summaries(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.rs.as_str())
    }

    /// Source and summary text of every record, for tokenizer training.
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.records.iter().flat_map(|r| [r.sd.as_str(), r.rs.as_str()])
    }

    pub fn write_jsonl<'a, W: Write>(
        records: impl IntoIterator<Item = &'a Record>,
        mut w: W,
    ) -> Result<()> {
        for r in records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn check_unique(records: &[Record]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::Malformed(format!("duplicate record id {:?}", r.id)));
        }
    }
    Ok(())
}

/// Document id order: numerically when both ids are integers, else bytewise.
pub fn cmp_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        _ => a.cmp(b),
    }
}
