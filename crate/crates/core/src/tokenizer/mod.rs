//! Byte-level BPE tokenizer: model, pre-tokenization, training and the JSON
//! interchange format.

pub mod format;
mod model;
pub mod pretok;
mod train;

use std::collections::HashMap;

use rayon::prelude::*;

pub use format::{load_tokenizer, save_tokenizer};
pub use model::{display_token, Merge, MergeRule, TokenId, TokenizerModel, BYTE_TOKENS};
pub use pretok::{PreTokenizerConfig, PreTokenizerMode};
pub use train::{count_pieces, train_bpe, MIN_MERGE_FREQUENCY};

/// Occurrence count of every token id over the encoding of each document.
/// The result is dense: `counts[id]`, zero for ids never emitted.
pub fn token_frequencies<I, S>(model: &TokenizerModel, corpus: I) -> Vec<u64>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut pieces: HashMap<Vec<u8>, u64> = HashMap::new();
    for doc in corpus {
        let doc = doc.as_ref().as_bytes();
        let folded;
        let bytes = if model.pretokenizer().lowercase {
            folded = doc.to_ascii_lowercase();
            folded.as_slice()
        } else {
            doc
        };
        for piece in pretok::pieces(bytes) {
            *pieces.entry(bytes[piece.range].to_vec()).or_insert(0) += 1;
        }
    }
    let pieces: Vec<(Vec<u8>, u64)> = pieces.into_iter().collect();
    pieces
        .par_iter()
        .fold(
            || vec![0u64; model.len()],
            |mut acc, (piece, n)| {
                for id in model.encode_piece(piece) {
                    acc[id as usize] += n;
                }
                acc
            },
        )
        .reduce(
            || vec![0u64; model.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        )
}
