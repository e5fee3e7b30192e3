//! Whitespace/punctuation pre-tokenization.
//!
//! Text is cut into maximal whitespace runs and non-whitespace runs. Each
//! non-whitespace run is further split into a leading punctuation run, a core
//! that starts and ends on an alphanumeric character, and a trailing
//! punctuation run. Every byte of the input lands in exactly one piece, so
//! concatenating the pieces reproduces the input. Bytes that are not valid
//! UTF-8 are classified as punctuation.

use std::ops::Range;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PreTokenizerMode {
    #[default]
    WhitespacePunct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PreTokenizerConfig {
    #[serde(default)]
    pub mode: PreTokenizerMode,
    /// ASCII case folding applied before splitting. Encoding is then no longer
    /// byte-exact under decode for inputs containing upper-case ASCII.
    #[serde(default)]
    pub lowercase: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PieceKind {
    Whitespace,
    Punct,
    Word,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Piece {
    pub range: Range<usize>,
    pub kind: PieceKind,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Space,
    Alnum,
    Other,
}

fn classify(bytes: &[u8]) -> Vec<(usize, usize, Class)> {
    let mut units = Vec::with_capacity(bytes.len());
    let mut offset = 0;
    for chunk in bytes.utf8_chunks() {
        for ch in chunk.valid().chars() {
            let len = ch.len_utf8();
            let class = if ch.is_whitespace() {
                Class::Space
            } else if ch.is_alphanumeric() {
                Class::Alnum
            } else {
                Class::Other
            };
            units.push((offset, offset + len, class));
            offset += len;
        }
        for _ in chunk.invalid() {
            units.push((offset, offset + 1, Class::Other));
            offset += 1;
        }
    }
    units
}

/// Split `bytes` into pre-token pieces that exactly tile the input.
pub fn pieces(bytes: &[u8]) -> Vec<Piece> {
    let units = classify(bytes);
    let mut out = Vec::new();
    let mut i = 0;
    while i < units.len() {
        let space = units[i].2 == Class::Space;
        let mut j = i;
        while j < units.len() && (units[j].2 == Class::Space) == space {
            j += 1;
        }
        let run = &units[i..j];
        if space {
            out.push(Piece {
                range: run[0].0..run[run.len() - 1].1,
                kind: PieceKind::Whitespace,
            });
        } else {
            split_run(run, &mut out);
        }
        i = j;
    }
    out
}

fn split_run(run: &[(usize, usize, Class)], out: &mut Vec<Piece>) {
    let start = run[0].0;
    let end = run[run.len() - 1].1;
    let first = run.iter().position(|u| u.2 == Class::Alnum);
    let Some(first) = first else {
        out.push(Piece { range: start..end, kind: PieceKind::Punct });
        return;
    };
    let last = run.iter().rposition(|u| u.2 == Class::Alnum).unwrap_or(first);
    let core_start = run[first].0;
    let core_end = run[last].1;
    if core_start > start {
        out.push(Piece { range: start..core_start, kind: PieceKind::Punct });
    }
    out.push(Piece { range: core_start..core_end, kind: PieceKind::Word });
    if core_end < end {
        out.push(Piece { range: core_end..end, kind: PieceKind::Punct });
    }
}

/// Unigrams of a text: whitespace-delimited words with leading and trailing
/// punctuation stripped. Punctuation-only words yield nothing.
pub fn unigrams(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace().filter_map(|w| {
        let core = w.trim_matches(|c: char| !c.is_alphanumeric());
        (!core.is_empty()).then_some(core)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split(s: &str) -> Vec<&str> {
        pieces(s.as_bytes()).into_iter().map(|p| &s[p.range]).collect()
    }

    #[test]
    fn splits_edge_punctuation() {
        assert_eq!(split("(osteoporosis)."), vec!["(", "osteoporosis", ")."]);
        assert_eq!(split("co-morbid"), vec!["co-morbid"]);
        assert_eq!(split("a  b\n"), vec!["a", "  ", "b", "\n"]);
        assert_eq!(split("--"), vec!["--"]);
        assert!(split("").is_empty());
    }

    #[test]
    fn invalid_bytes_are_punctuation() {
        let bytes = b"ab\xE2";
        let p = pieces(bytes);
        assert_eq!(p.len(), 2);
        assert_eq!(p[1].kind, PieceKind::Punct);
        assert_eq!(p[1].range, 2..3);
    }

    #[test]
    fn unigram_stripping_matches_word_pieces() {
        let text = "Hello, world! -- (naloxone) 2023mg";
        let words: Vec<_> = unigrams(text).collect();
        assert_eq!(words, vec!["Hello", "world", "naloxone", "2023mg"]);
        let from_pieces: Vec<_> = pieces(text.as_bytes())
            .into_iter()
            .filter(|p| p.kind == PieceKind::Word)
            .map(|p| &text[p.range])
            .collect();
        assert_eq!(words, from_pieces);
    }
}
