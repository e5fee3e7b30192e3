//! JSON interchange format for tokenizer models.
//!
//! ```text
//! {"version":1,"pretokenizer":{"mode":"whitespace_punct","lowercase":false},
//!  "vocab":{"<token>":<id>,...},"merges":["<left> <right>",...]}
//! ```
//!
//! Vocabulary keys are sorted; the merges array index is the rank. Byte tokens
//! are written `<0xHH>`. Inside longer tokens a backslash is written `\\`,
//! whitespace and control characters as `\uXXXX`, and bytes that are not part
//! of valid UTF-8 as `\xHH`. A longer token whose text would read exactly like
//! a byte token has its `<` written as `\u003C`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use super::model::{display_token, Merge, TokenId, TokenizerModel, BYTE_TOKENS};
use super::pretok::PreTokenizerConfig;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct TokenizerFileOut<'a> {
    version: u32,
    pretokenizer: PreTokenizerConfig,
    vocab: BTreeMap<String, TokenId>,
    merges: Vec<String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    provenance: &'a BTreeMap<String, String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenizerFileIn {
    version: u32,
    #[serde(default)]
    pretokenizer: PreTokenizerConfig,
    vocab: VocabEntries,
    merges: Vec<String>,
    #[serde(default)]
    provenance: BTreeMap<String, String>,
}

/// Vocabulary object read in document order so duplicate keys are visible.
struct VocabEntries(Vec<(String, u64)>);

impl<'de> Deserialize<'de> for VocabEntries {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = VocabEntries;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map of token string to id")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Self::Value, A::Error> {
                let mut out = Vec::with_capacity(map.size_hint().unwrap_or(0));
                while let Some((k, v)) = map.next_entry::<String, u64>()? {
                    out.push((k, v));
                }
                Ok(VocabEntries(out))
            }
        }
        de.deserialize_map(V)
    }
}

/// Render a token as a vocabulary key.
pub fn token_key(id: TokenId, bytes: &[u8]) -> String {
    if (id as usize) < BYTE_TOKENS && bytes.len() == 1 {
        return format!("<0x{:02X}>", bytes[0]);
    }
    escape_token(bytes)
}

/// Escape a multi-byte token (never produces the `<0xHH>` byte form).
pub fn escape_token(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len());
    for chunk in bytes.utf8_chunks() {
        for c in chunk.valid().chars() {
            if c == '\\' {
                out.push_str("\\\\");
            } else if c.is_whitespace() || c.is_control() {
                out.push_str(&format!("\\u{:04X}", c as u32));
            } else {
                out.push(c);
            }
        }
        for b in chunk.invalid() {
            out.push_str(&format!("\\x{b:02X}"));
        }
    }
    if parse_byte_form(&out).is_some() {
        out.replace_range(0..1, "\\u003C");
    }
    out
}

fn parse_byte_form(key: &str) -> Option<u8> {
    let hex = key.strip_prefix("<0x")?.strip_suffix('>')?;
    if hex.len() != 2 {
        return None;
    }
    u8::from_str_radix(hex, 16).ok()
}

/// Parse a vocabulary key back into token bytes.
pub fn parse_key(key: &str) -> Result<Vec<u8>> {
    if let Some(b) = parse_byte_form(key) {
        return Ok(vec![b]);
    }
    let bad = || Error::Malformed(format!("bad escape in token key {key:?}"));
    let mut out = Vec::with_capacity(key.len());
    let mut chars = key.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            let mut buf = [0u8; 4];
            out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            continue;
        }
        match chars.next().ok_or_else(bad)? {
            '\\' => out.push(b'\\'),
            'u' => {
                let hex: String = chars.by_ref().take(4).collect();
                let cp = u32::from_str_radix(&hex, 16).map_err(|_| bad())?;
                if hex.len() != 4 {
                    return Err(bad());
                }
                let ch = char::from_u32(cp).ok_or_else(bad)?;
                let mut buf = [0u8; 4];
                out.extend_from_slice(ch.encode_utf8(&mut buf).as_bytes());
            }
            'x' => {
                let hex: String = chars.by_ref().take(2).collect();
                if hex.len() != 2 {
                    return Err(bad());
                }
                out.push(u8::from_str_radix(&hex, 16).map_err(|_| bad())?);
            }
            _ => return Err(bad()),
        }
    }
    if out.is_empty() {
        return Err(Error::Malformed("empty token key".into()));
    }
    Ok(out)
}

/// Canonical serialization: byte-identical for identical models.
pub fn to_bytes(model: &TokenizerModel) -> Vec<u8> {
    let keys: Vec<String> = model
        .tokens()
        .iter()
        .enumerate()
        .map(|(id, t)| token_key(id as TokenId, t))
        .collect();
    let vocab = keys.iter().enumerate().map(|(id, k)| (k.clone(), id as TokenId)).collect();
    let merges = model
        .merges()
        .iter()
        .map(|m| format!("{} {}", keys[m.left as usize], keys[m.right as usize]))
        .collect();
    let doc = TokenizerFileOut {
        version: FORMAT_VERSION,
        pretokenizer: model.pretokenizer(),
        vocab,
        merges,
        provenance: model.provenance(),
    };
    let mut out = serde_json::to_vec(&doc).expect("tokenizer document serializes");
    out.push(b'\n');
    out
}

pub fn save_tokenizer<W: Write>(model: &TokenizerModel, mut writer: W) -> Result<()> {
    writer.write_all(&to_bytes(model))?;
    Ok(())
}

pub fn load_tokenizer<R: Read>(reader: R) -> Result<TokenizerModel> {
    let doc: TokenizerFileIn =
        serde_json::from_reader(reader).map_err(|e| Error::Malformed(e.to_string()))?;
    from_document(doc)
}

pub fn from_slice(bytes: &[u8]) -> Result<TokenizerModel> {
    let doc: TokenizerFileIn =
        serde_json::from_slice(bytes).map_err(|e| Error::Malformed(e.to_string()))?;
    from_document(doc)
}

fn from_document(doc: TokenizerFileIn) -> Result<TokenizerModel> {
    if doc.version != FORMAT_VERSION {
        return Err(Error::Malformed(format!("unsupported version {}", doc.version)));
    }
    let n = doc.vocab.0.len();
    let mut tokens: Vec<Option<Vec<u8>>> = vec![None; n];
    let mut by_key: BTreeMap<&str, TokenId> = BTreeMap::new();
    for (key, id) in &doc.vocab.0 {
        let idx = *id as usize;
        if idx >= n {
            return Err(Error::NonDenseIds(format!("id {id} with {n} vocabulary entries")));
        }
        if tokens[idx].is_some() {
            return Err(Error::NonDenseIds(format!("id {id} assigned twice")));
        }
        let bytes = parse_key(key)?;
        if by_key.insert(key.as_str(), *id as TokenId).is_some() {
            return Err(Error::DuplicateToken(key.clone()));
        }
        tokens[idx] = Some(bytes);
    }
    let tokens: Vec<Vec<u8>> = tokens.into_iter().map(|t| t.expect("dense ids")).collect();

    let mut index = std::collections::HashMap::with_capacity(n);
    for (id, t) in tokens.iter().enumerate() {
        if index.insert(t.as_slice(), id as TokenId).is_some() {
            return Err(Error::DuplicateToken(display_token(t)));
        }
    }

    let mut merges = Vec::with_capacity(doc.merges.len());
    for (rank, line) in doc.merges.iter().enumerate() {
        let mut parts = line.split(' ');
        let (Some(l), Some(r), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Malformed(format!("merge {rank} is not \"<left> <right>\": {line:?}")));
        };
        let lookup = |k: &str| {
            by_key.get(k).copied().ok_or_else(|| Error::UnknownMergeToken {
                rank,
                token: k.to_string(),
            })
        };
        let (left, right) = (lookup(l)?, lookup(r)?);
        let mut result_bytes = tokens[left as usize].clone();
        result_bytes.extend_from_slice(&tokens[right as usize]);
        let result = *index.get(result_bytes.as_slice()).ok_or_else(|| Error::DanglingMergeResult {
            rank,
            result: display_token(&result_bytes),
        })?;
        merges.push(Merge { left, right, result });
    }

    let mut model = TokenizerModel::from_parts(tokens, merges, doc.pretokenizer)?;
    model.set_provenance(doc.provenance);
    Ok(model)
}
