//! Evaluation splits: the top fraction of documents by OOV concentration on
//! the source or summary side, and a seeded uniform random split.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{cmp_ids, Corpus, Record};
use crate::error::{Error, Result};
use crate::metrics::TextCounts;
use crate::tokenizer::TokenizerModel;

pub const DEFAULT_TOP_FRAC: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Sd,
    Rs,
}

impl Side {
    fn text(self, r: &Record) -> &str {
        match self {
            Side::Sd => &r.sd,
            Side::Rs => &r.rs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Random,
    OovSd,
    OovRs,
}

impl SplitKind {
    pub fn side(self) -> Option<Side> {
        match self {
            SplitKind::Random => None,
            SplitKind::OovSd => Some(Side::Sd),
            SplitKind::OovRs => Some(Side::Rs),
        }
    }
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitKind::Random => "random",
            SplitKind::OovSd => "oov_sd",
            SplitKind::OovRs => "oov_rs",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub split: SplitKind,
    pub seed: u64,
    /// Lowest scored OOV concentration in the test set; null for random splits.
    pub threshold: Option<f64>,
    pub test: Vec<String>,
    pub train: Vec<String>,
}

impl SplitManifest {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec(self)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::Malformed(format!("split manifest: {e}")))
    }

    /// Test and train records, in manifest order.
    pub fn materialize<'a>(&self, corpus: &'a Corpus) -> Result<(Vec<&'a Record>, Vec<&'a Record>)> {
        let by_id: std::collections::HashMap<&str, &Record> =
            corpus.records.iter().map(|r| (r.id.as_str(), r)).collect();
        let pick = |ids: &[String]| {
            ids.iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| Error::Malformed(format!("manifest id {id:?} not in corpus")))
                })
                .collect::<Result<Vec<_>>>()
        };
        let (test, train) = (pick(&self.test)?, pick(&self.train)?);
        if test.len() + train.len() != corpus.len() {
            return Err(Error::Malformed("manifest does not partition the corpus".into()));
        }
        Ok((test, train))
    }
}

/// Exact OOV concentration as `fragmented / unigrams` (0/1 for no unigrams).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Score {
    pub fragmented: usize,
    pub unigrams: usize,
}

impl Score {
    pub fn value(self) -> f64 {
        if self.unigrams == 0 {
            0.0
        } else {
            self.fragmented as f64 / self.unigrams as f64
        }
    }

    /// Compare the ratios exactly by cross-multiplication.
    pub fn cmp_ratio(&self, other: &Score) -> Ordering {
        let d = |s: &Score| s.unigrams.max(1) as u128;
        (self.fragmented as u128 * d(other)).cmp(&(other.fragmented as u128 * d(self)))
    }
}

pub fn oov_scores(corpus: &Corpus, model: &TokenizerModel, side: Side, split_threshold: usize) -> Vec<Score> {
    corpus
        .records
        .par_iter()
        .map(|r| {
            let c = TextCounts::measure(model, side.text(r), split_threshold);
            Score { fragmented: c.fragmented, unigrams: c.unigrams }
        })
        .collect()
}

/// Number of test documents: `top_frac * n` rounded half up.
pub fn test_size(n: usize, top_frac: f64) -> usize {
    (top_frac * n as f64 + 0.5).floor() as usize
}

/// Top `top_frac` of documents by OOV concentration on `side` become the test
/// set, ordered by score (ties by ascending id); the rest, in corpus order, train.
pub fn split_oov(
    corpus: &Corpus,
    model: &TokenizerModel,
    side: Side,
    top_frac: f64,
    split_threshold: usize,
) -> Result<SplitManifest> {
    if !(top_frac > 0.0 && top_frac < 1.0) {
        return Err(Error::InvalidArgument(format!("top fraction must be in (0, 1), got {top_frac}")));
    }
    let min = (1.0 / top_frac).ceil() as usize;
    if corpus.len() < min {
        return Err(Error::CorpusTooSmall(format!(
            "{} records, need at least {min} for a top fraction of {top_frac}",
            corpus.len()
        )));
    }
    let scores = oov_scores(corpus, model, side, split_threshold);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b].cmp_ratio(&scores[a]).then_with(|| cmp_ids(&corpus.records[a].id, &corpus.records[b].id))
    });
    let k = test_size(corpus.len(), top_frac);
    let in_test: HashSet<usize> = order[..k].iter().copied().collect();
    let threshold = order[..k].last().map(|&i| scores[i].value());
    Ok(SplitManifest {
        split: match side {
            Side::Sd => SplitKind::OovSd,
            Side::Rs => SplitKind::OovRs,
        },
        seed: 0,
        threshold,
        test: order[..k].iter().map(|&i| corpus.records[i].id.clone()).collect(),
        train: (0..corpus.len())
            .filter(|i| !in_test.contains(i))
            .map(|i| corpus.records[i].id.clone())
            .collect(),
    })
}

/// Uniform sample of `test_size` documents without replacement, drawn with
/// ChaCha8 seeded from `seed`. Both sides keep corpus order.
pub fn split_random(corpus: &Corpus, test_size: usize, seed: u64) -> Result<SplitManifest> {
    if test_size > corpus.len() {
        return Err(Error::InvalidArgument(format!(
            "test size {test_size} exceeds corpus size {}",
            corpus.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, corpus.len(), test_size).into_vec();
    picked.sort_unstable();
    let in_test: HashSet<usize> = picked.iter().copied().collect();
    let ids = |keep: bool| {
        (0..corpus.len())
            .filter(|i| in_test.contains(i) == keep)
            .map(|i| corpus.records[i].id.clone())
            .collect()
    };
    Ok(SplitManifest { split: SplitKind::Random, seed, threshold: None, test: ids(true), train: ids(false) })
}

/// Share of `a`'s test ids that also appear in `b`'s test set.
pub fn test_overlap(a: &SplitManifest, b: &SplitManifest) -> f64 {
    if a.test.is_empty() {
        return 0.0;
    }
    let other: HashSet<&str> = b.test.iter().map(String::as_str).collect();
    a.test.iter().filter(|id| other.contains(id.as_str())).count() as f64 / a.test.len() as f64
}
