//! BPE training from a document stream.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};

use super::model::{Merge, TokenId, TokenizerModel, BYTE_TOKENS};
use super::pretok::{self, PieceKind, PreTokenizerConfig};
use crate::error::{Error, Result};

/// Pairs seen fewer times than this are never merged.
pub const MIN_MERGE_FREQUENCY: i64 = 2;

struct Word {
    syms: Vec<TokenId>,
    count: i64,
}

#[derive(PartialEq, Eq)]
struct Candidate {
    count: i64,
    left: Vec<u8>,
    right: Vec<u8>,
    pair: (TokenId, TokenId),
}

impl Ord for Candidate {
    // Max-heap: highest count first, then the lexicographically smallest (left, right).
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| other.left.cmp(&self.left))
            .then_with(|| other.right.cmp(&self.right))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Count the non-whitespace pre-tokens of a corpus.
pub fn count_pieces<I, S>(corpus: I, cfg: PreTokenizerConfig) -> BTreeMap<Vec<u8>, u64>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts = BTreeMap::new();
    for doc in corpus {
        let doc = doc.as_ref().as_bytes();
        let folded;
        let bytes = if cfg.lowercase {
            folded = doc.to_ascii_lowercase();
            folded.as_slice()
        } else {
            doc
        };
        for piece in pretok::pieces(bytes) {
            if piece.kind != PieceKind::Whitespace {
                *counts.entry(bytes[piece.range].to_vec()).or_insert(0) += 1;
            }
        }
    }
    counts
}

/// Train a byte-level BPE model.
///
/// Starts from the 256 byte tokens and repeatedly merges the most frequent
/// adjacent pair inside pre-tokens until `vocab_size` tokens exist or no pair
/// occurs at least twice. Ties go to the lexicographically smaller
/// `(left, right)` byte strings. Whitespace pieces are not trained on.
pub fn train_bpe<I, S>(corpus: I, vocab_size: usize, cfg: PreTokenizerConfig) -> Result<TokenizerModel>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if vocab_size <= BYTE_TOKENS {
        return Err(Error::InvalidArgument(format!(
            "vocab_size must exceed {BYTE_TOKENS}, got {vocab_size}"
        )));
    }
    let mut docs = 0usize;
    let counts = count_pieces(corpus.into_iter().inspect(|_| docs += 1), cfg);
    if docs == 0 {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }

    let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
    let mut index: HashMap<Vec<u8>, TokenId> =
        tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as TokenId)).collect();
    let mut merges: Vec<Merge> = Vec::new();

    let mut words: Vec<Word> = counts
        .into_iter()
        .map(|(bytes, count)| Word {
            syms: bytes.iter().map(|&b| b as TokenId).collect(),
            count: count as i64,
        })
        .collect();

    let mut pair_counts: HashMap<(TokenId, TokenId), i64> = HashMap::new();
    let mut pair_words: HashMap<(TokenId, TokenId), HashSet<usize>> = HashMap::new();
    for (wi, w) in words.iter().enumerate() {
        for p in w.syms.windows(2) {
            let pair = (p[0], p[1]);
            *pair_counts.entry(pair).or_insert(0) += w.count;
            pair_words.entry(pair).or_default().insert(wi);
        }
    }

    let candidate = |tokens: &[Vec<u8>], pair: (TokenId, TokenId), count: i64| Candidate {
        count,
        left: tokens[pair.0 as usize].clone(),
        right: tokens[pair.1 as usize].clone(),
        pair,
    };
    let mut heap: BinaryHeap<Candidate> = pair_counts
        .iter()
        .map(|(&pair, &count)| candidate(&tokens, pair, count))
        .collect();

    while tokens.len() < vocab_size {
        let Some(top) = heap.pop() else { break };
        let current = pair_counts.get(&top.pair).copied().unwrap_or(0);
        if current != top.count {
            if current > 0 {
                heap.push(candidate(&tokens, top.pair, current));
            }
            continue;
        }
        if current < MIN_MERGE_FREQUENCY {
            break;
        }

        let (a, b) = top.pair;
        let mut merged = top.left;
        merged.extend_from_slice(&top.right);
        let result = match index.get(&merged) {
            Some(&id) => id,
            None => {
                let id = tokens.len() as TokenId;
                index.insert(merged.clone(), id);
                tokens.push(merged);
                id
            }
        };
        merges.push(Merge { left: a, right: b, result });

        let mut affected: Vec<usize> =
            pair_words.remove(&top.pair).unwrap_or_default().into_iter().collect();
        affected.sort_unstable();
        let mut touched: HashSet<(TokenId, TokenId)> = HashSet::new();
        for wi in affected {
            let word = &mut words[wi];
            let old = std::mem::take(&mut word.syms);
            let mut new = Vec::with_capacity(old.len());
            let mut i = 0;
            while i < old.len() {
                if i + 1 < old.len() && old[i] == a && old[i + 1] == b {
                    new.push(result);
                    i += 2;
                } else {
                    new.push(old[i]);
                    i += 1;
                }
            }
            for p in old.windows(2) {
                let pair = (p[0], p[1]);
                *pair_counts.entry(pair).or_insert(0) -= word.count;
                touched.insert(pair);
            }
            for p in new.windows(2) {
                let pair = (p[0], p[1]);
                *pair_counts.entry(pair).or_insert(0) += word.count;
                pair_words.entry(pair).or_default().insert(wi);
                touched.insert(pair);
            }
            word.syms = new;
        }
        pair_counts.remove(&top.pair);
        let mut touched: Vec<_> = touched.into_iter().collect();
        touched.sort_unstable();
        for pair in touched {
            if pair == top.pair {
                continue;
            }
            match pair_counts.get(&pair).copied() {
                Some(c) if c > 0 => heap.push(candidate(&tokens, pair, c)),
                _ => {
                    pair_counts.remove(&pair);
                }
            }
        }
    }

    TokenizerModel::from_parts(tokens, merges, cfg)
}
