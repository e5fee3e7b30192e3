//! Domain vocabulary selection: tokens learned by a domain tokenizer that the
//! base vocabulary lacks, optionally restricted to ASCII letters, ranked by
//! how often the domain tokenizer emits them on the domain corpus.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::format::{escape_token, parse_key};
use crate::tokenizer::{display_token, token_frequencies, TokenizerModel};

pub const DEFAULT_BUDGET: usize = 10_000;

/// True iff the token is non-empty and every byte is in `[A-Za-z]`.
///
/// The pre-tokenizer emits no word-boundary marker, so there is nothing to skip.
pub fn is_alphabetic(token: &[u8]) -> bool {
    !token.is_empty() && token.iter().all(u8::is_ascii_alphabetic)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainEntry {
    pub token: Vec<u8>,
    pub corpus_frequency: u64,
    /// Rank of the first merge producing the token in the domain tokenizer.
    pub domain_merge_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainVocabulary {
    /// Frequency descending, ties by merge rank ascending.
    pub entries: Vec<DomainEntry>,
    pub budget: usize,
}

#[derive(Serialize, Deserialize)]
struct Line {
    token: String,
    freq: u64,
    rank: usize,
}

impl DomainVocabulary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries ordered by domain merge rank, the order in which they are placed.
    pub fn in_merge_order(&self) -> Vec<&DomainEntry> {
        let mut v: Vec<&DomainEntry> = self.entries.iter().collect();
        v.sort_by_key(|e| e.domain_merge_rank);
        v
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.entries {
            let line = Line {
                token: escape_token(&e.token),
                freq: e.corpus_frequency,
                rank: e.domain_merge_rank,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Read entries in file order. The budget is taken to be the entry count.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let l: Line = serde_json::from_str(&line)
                .map_err(|e| Error::Malformed(format!("domain vocabulary line {}: {e}", n + 1)))?;
            entries.push(DomainEntry {
                token: parse_key(&l.token)?,
                corpus_frequency: l.freq,
                domain_merge_rank: l.rank,
            });
        }
        let budget = entries.len();
        Ok(Self { entries, budget })
    }
}

/// Select up to `budget` domain tokens.
///
/// Tokens already in `base` are always dropped. With `refine` set, tokens that
/// are not purely alphabetic are dropped too. Survivors are ranked by their
/// count in the domain tokenizer's encoding of `corpus`.
pub fn build_domain_vocab<I, S>(
    domain: &TokenizerModel,
    base: &TokenizerModel,
    corpus: I,
    budget: usize,
    refine: bool,
) -> Result<DomainVocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if budget == 0 {
        return Err(Error::InvalidArgument("budget must be at least 1".into()));
    }
    let freqs = token_frequencies(domain, corpus);
    let ranks = domain.producing_ranks();
    let mut entries: Vec<DomainEntry> = domain
        .tokens()
        .iter()
        .enumerate()
        .filter_map(|(id, tok)| {
            let rank = ranks[id]?;
            if base.contains(tok) || (refine && !is_alphabetic(tok)) {
                return None;
            }
            Some(DomainEntry {
                token: tok.clone(),
                corpus_frequency: freqs[id],
                domain_merge_rank: rank,
            })
        })
        .collect();
    entries.sort_by(|a, b| {
        b.corpus_frequency
            .cmp(&a.corpus_frequency)
            .then(a.domain_merge_rank.cmp(&b.domain_merge_rank))
    });
    if entries.len() < budget {
        log::warn!(
            "only {} domain tokens survive filtering, budget is {budget}",
            entries.len()
        );
    }
    entries.truncate(budget);
    log::debug!(
        "top domain token: {}",
        entries.first().map(|e| display_token(&e.token)).unwrap_or_default()
    );
    Ok(DomainVocabulary { entries, budget })
}
