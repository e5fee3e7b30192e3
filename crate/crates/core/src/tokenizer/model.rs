use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt;

use super::pretok::{self, PieceKind, PreTokenizerConfig};
use crate::error::{Error, Result};

pub type TokenId = u32;

/// Number of single-byte tokens every model carries at ids `0..256`.
pub const BYTE_TOKENS: usize = 256;

/// A merge rule stored by id. Its rank is its position in the merge list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Merge {
    pub left: TokenId,
    pub right: TokenId,
    pub result: TokenId,
}

/// A merge rule resolved to token strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeRule {
    pub left: Vec<u8>,
    pub right: Vec<u8>,
    pub result: Vec<u8>,
    pub rank: usize,
}

/// Byte-level BPE model: dense vocabulary, rank-ordered merges and a
/// pre-tokenizer configuration.
///
/// Ids `0..256` are the byte tokens (`id == byte`). Every other token is either
/// the result of at least one merge or an orphan: a declared token with no
/// merge path, which the encoder can never emit.
#[derive(Clone)]
pub struct TokenizerModel {
    tokens: Vec<Vec<u8>>,
    merges: Vec<Merge>,
    pretokenizer: PreTokenizerConfig,
    provenance: BTreeMap<String, String>,
    index: HashMap<Vec<u8>, TokenId>,
    pair_ranks: HashMap<(TokenId, TokenId), u32>,
}

impl PartialEq for TokenizerModel {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
            && self.merges == other.merges
            && self.pretokenizer == other.pretokenizer
            && self.provenance == other.provenance
    }
}

impl Eq for TokenizerModel {}

impl fmt::Debug for TokenizerModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TokenizerModel")
            .field("vocab_size", &self.tokens.len())
            .field("merges", &self.merges.len())
            .field("pretokenizer", &self.pretokenizer)
            .finish()
    }
}

impl TokenizerModel {
    /// A model holding only the 256 byte tokens.
    pub fn byte_level(pretokenizer: PreTokenizerConfig) -> Self {
        let tokens = (0..=255u8).map(|b| vec![b]).collect();
        Self::from_parts(tokens, Vec::new(), pretokenizer).expect("byte-level model is valid")
    }

    /// Build and validate a model.
    pub fn from_parts(
        tokens: Vec<Vec<u8>>,
        merges: Vec<Merge>,
        pretokenizer: PreTokenizerConfig,
    ) -> Result<Self> {
        let mut model = Self {
            tokens,
            merges,
            pretokenizer,
            provenance: BTreeMap::new(),
            index: HashMap::new(),
            pair_ranks: HashMap::new(),
        };
        model.rebuild_index()?;
        model.validate()?;
        Ok(model)
    }

    fn rebuild_index(&mut self) -> Result<()> {
        self.index.clear();
        self.index.reserve(self.tokens.len());
        for (id, tok) in self.tokens.iter().enumerate() {
            if self.index.insert(tok.clone(), id as TokenId).is_some() {
                return Err(Error::DuplicateToken(display_token(tok)));
            }
        }
        self.pair_ranks.clear();
        self.pair_ranks.reserve(self.merges.len());
        for (rank, m) in self.merges.iter().enumerate() {
            if self.pair_ranks.insert((m.left, m.right), rank as u32).is_some() {
                return Err(Error::InvalidMerge { rank, reason: "duplicate pair".into() });
            }
        }
        Ok(())
    }

    /// Check every structural invariant of the model.
    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        if n < BYTE_TOKENS {
            return Err(Error::NonDenseIds(format!(
                "vocabulary has {n} tokens, byte tokens need {BYTE_TOKENS}"
            )));
        }
        for (id, tok) in self.tokens.iter().enumerate() {
            if id < BYTE_TOKENS {
                if tok.as_slice() != [id as u8] {
                    return Err(Error::NonDenseIds(format!("id {id} must hold byte 0x{id:02X}")));
                }
            } else if tok.len() < 2 {
                return Err(Error::Malformed(format!(
                    "token id {id} is {} bytes long; single bytes live at ids 0..256",
                    tok.len()
                )));
            }
        }
        if self.index.len() != n {
            return Err(Error::Malformed("token index out of sync".into()));
        }

        let mut first_rank: Vec<Option<usize>> = vec![None; n];
        for (rank, m) in self.merges.iter().enumerate() {
            for id in [m.left, m.right, m.result] {
                if id as usize >= n {
                    return Err(Error::IdOutOfRange { id, size: n });
                }
            }
            let slot = &mut first_rank[m.result as usize];
            if slot.is_none() {
                *slot = Some(rank);
            }
        }
        for (rank, m) in self.merges.iter().enumerate() {
            let (l, r, res) = (self.bytes(m.left), self.bytes(m.right), self.bytes(m.result));
            if res.len() != l.len() + r.len() || !res.starts_with(l) || !res.ends_with(r) {
                return Err(Error::InvalidMerge {
                    rank,
                    reason: format!(
                        "{} + {} does not concatenate to {}",
                        display_token(l),
                        display_token(r),
                        display_token(res)
                    ),
                });
            }
            for operand in [m.left, m.right] {
                if let Some(first) = first_rank[operand as usize] {
                    if first >= rank {
                        return Err(Error::InvalidMerge {
                            rank,
                            reason: format!(
                                "operand {} is first produced at rank {first}",
                                display_token(self.bytes(operand))
                            ),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pretokenizer(&self) -> PreTokenizerConfig {
        self.pretokenizer
    }

    pub fn provenance(&self) -> &BTreeMap<String, String> {
        &self.provenance
    }

    pub fn set_provenance(&mut self, provenance: BTreeMap<String, String>) {
        self.provenance = provenance;
    }

    pub fn tokens(&self) -> &[Vec<u8>] {
        &self.tokens
    }

    pub fn token(&self, id: TokenId) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    fn bytes(&self, id: TokenId) -> &[u8] {
        &self.tokens[id as usize]
    }

    pub fn id(&self, token: &[u8]) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &[u8]) -> bool {
        self.index.contains_key(token)
    }

    pub fn is_byte_token(id: TokenId) -> bool {
        (id as usize) < BYTE_TOKENS
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn merge_rank(&self, left: TokenId, right: TokenId) -> Option<u32> {
        self.pair_ranks.get(&(left, right)).copied()
    }

    pub fn merge_rule(&self, rank: usize) -> Option<MergeRule> {
        let m = self.merges.get(rank)?;
        Some(MergeRule {
            left: self.bytes(m.left).to_vec(),
            right: self.bytes(m.right).to_vec(),
            result: self.bytes(m.result).to_vec(),
            rank,
        })
    }

    /// Lowest rank of a merge producing each token, `None` for byte tokens and orphans.
    pub fn producing_ranks(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.tokens.len()];
        for (rank, m) in self.merges.iter().enumerate() {
            let slot = &mut out[m.result as usize];
            if slot.is_none() {
                *slot = Some(rank);
            }
        }
        out
    }

    /// Encode text: pre-tokenize, then run BPE within every piece.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        self.encode_bytes(text.as_bytes())
    }

    pub fn encode_bytes(&self, bytes: &[u8]) -> Vec<TokenId> {
        self.encode_filtered(bytes, true)
    }

    /// Encode text, dropping the tokens of whitespace pieces.
    pub fn encode_words(&self, text: &str) -> Vec<TokenId> {
        self.encode_filtered(text.as_bytes(), false)
    }

    fn encode_filtered(&self, bytes: &[u8], keep_whitespace: bool) -> Vec<TokenId> {
        let folded;
        let bytes = if self.pretokenizer.lowercase {
            folded = bytes.to_ascii_lowercase();
            folded.as_slice()
        } else {
            bytes
        };
        let mut out = Vec::with_capacity(bytes.len() / 3 + 1);
        for piece in pretok::pieces(bytes) {
            if keep_whitespace || piece.kind != PieceKind::Whitespace {
                self.encode_piece_into(&bytes[piece.range], &mut out);
            }
        }
        out
    }

    /// BPE over a single piece, without pre-tokenization.
    pub fn encode_piece(&self, piece: &[u8]) -> Vec<TokenId> {
        let mut out = Vec::new();
        self.encode_piece_into(piece, &mut out);
        out
    }

    /// Lowest-rank-first BPE. Among equal ranks the leftmost occurrence is
    /// merged first; one merge is applied per step.
    pub fn encode_piece_into(&self, piece: &[u8], out: &mut Vec<TokenId>) {
        const NONE: usize = usize::MAX;
        let n = piece.len();
        if n < 2 {
            out.extend(piece.iter().map(|&b| b as TokenId));
            return;
        }
        let mut sym: Vec<TokenId> = piece.iter().map(|&b| b as TokenId).collect();
        let mut next: Vec<usize> = (1..=n).collect();
        let mut prev: Vec<usize> = (0..n).map(|i| if i == 0 { NONE } else { i - 1 }).collect();
        let mut alive = vec![true; n];
        let mut heap = BinaryHeap::new();
        for i in 0..n - 1 {
            if let Some(&rank) = self.pair_ranks.get(&(sym[i], sym[i + 1])) {
                heap.push(Reverse((rank, i)));
            }
        }
        while let Some(Reverse((rank, i))) = heap.pop() {
            if !alive[i] {
                continue;
            }
            let j = next[i];
            if j >= n || self.pair_ranks.get(&(sym[i], sym[j])) != Some(&rank) {
                continue;
            }
            sym[i] = self.merges[rank as usize].result;
            alive[j] = false;
            let k = next[j];
            next[i] = k;
            if k < n {
                prev[k] = i;
                if let Some(&r) = self.pair_ranks.get(&(sym[i], sym[k])) {
                    heap.push(Reverse((r, i)));
                }
            }
            let p = prev[i];
            if p != NONE {
                if let Some(&r) = self.pair_ranks.get(&(sym[p], sym[i])) {
                    heap.push(Reverse((r, p)));
                }
            }
        }
        let mut i = 0;
        while i < n {
            out.push(sym[i]);
            i = next[i];
        }
    }

    /// Concatenated token bytes.
    pub fn decode_bytes(&self, ids: &[TokenId]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let tok = self
                .token(id)
                .ok_or(Error::IdOutOfRange { id, size: self.tokens.len() })?;
            out.extend_from_slice(tok);
        }
        Ok(out)
    }

    /// Text decode; invalid UTF-8 becomes U+FFFD.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let bytes = self.decode_bytes(ids)?;
        Ok(match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
        })
    }

    // Mutation used by surgery. Callers re-validate once they are done.

    pub(crate) fn push_token(&mut self, token: Vec<u8>) -> TokenId {
        let id = self.tokens.len() as TokenId;
        self.index.insert(token.clone(), id);
        self.tokens.push(token);
        id
    }

    pub(crate) fn replace_token(&mut self, id: TokenId, token: Vec<u8>) {
        self.vacate(id);
        self.tokens[id as usize] = token.clone();
        self.index.insert(token, id);
    }

    /// Drop the string currently at `id` from the lookup index. The slot keeps
    /// its stale bytes until `replace_token` fills it.
    pub(crate) fn vacate(&mut self, id: TokenId) {
        let old = &self.tokens[id as usize];
        if self.index.get(old) == Some(&id) {
            self.index.remove(old);
        }
    }

    /// Rebuild lookup tables from scratch and validate.
    pub(crate) fn revalidate(&mut self) -> Result<()> {
        self.rebuild_index()?;
        self.validate()
    }

    pub(crate) fn push_merge(&mut self, left: TokenId, right: TokenId, result: TokenId) -> u32 {
        let rank = self.merges.len() as u32;
        self.merges.push(Merge { left, right, result });
        self.pair_ranks.insert((left, right), rank);
        rank
    }

    pub(crate) fn retain_merges(&mut self, mut keep: impl FnMut(&Merge) -> bool) {
        self.merges.retain(|m| keep(m));
        self.pair_ranks = self
            .merges
            .iter()
            .enumerate()
            .map(|(rank, m)| ((m.left, m.right), rank as u32))
            .collect();
    }
}

/// Human-readable rendering for diagnostics.
pub fn display_token(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) => s.to_string(),
        Err(_) => bytes.iter().map(|b| format!("<0x{b:02X}>")).collect(),
    }
}
