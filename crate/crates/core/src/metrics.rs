//! Corpus measurements: fragment score, OOV concentration and novel unigram
//! concentration, per document and aggregated over a paired corpus.

use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{BadLine, Corpus};
use crate::error::{Error, Result};
use crate::tokenizer::pretok::unigrams;
use crate::tokenizer::TokenizerModel;

pub const DEFAULT_SPLIT_THRESHOLD: usize = 2;

/// Integer counts behind the per-text ratios.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextCounts {
    /// Tokens in the whole text, whitespace pieces excluded.
    pub tokens: usize,
    pub unigrams: usize,
    /// Sum over unigrams of their token counts.
    pub unigram_tokens: usize,
    /// Unigrams encoding to at least `split_threshold` tokens.
    pub fragmented: usize,
}

impl TextCounts {
    pub fn measure(model: &TokenizerModel, text: &str, split_threshold: usize) -> Self {
        let mut c = TextCounts { tokens: model.encode_words(text).len(), ..Default::default() };
        for u in unigrams(text) {
            let n = model.encode_words(u).len();
            c.unigrams += 1;
            c.unigram_tokens += n;
            if n >= split_threshold {
                c.fragmented += 1;
            }
        }
        c
    }

    pub fn fragment_score(&self) -> f64 {
        if self.unigrams == 0 {
            1.0
        } else {
            self.unigram_tokens as f64 / self.unigrams as f64
        }
    }

    pub fn oov_concentration(&self) -> f64 {
        if self.unigrams == 0 {
            0.0
        } else {
            self.fragmented as f64 / self.unigrams as f64
        }
    }
}

/// Mean number of tokens per unigram; 1.0 for text without unigrams.
pub fn fragment_score(model: &TokenizerModel, text: &str) -> f64 {
    TextCounts::measure(model, text, DEFAULT_SPLIT_THRESHOLD).fragment_score()
}

/// Fraction of unigrams split into at least `split_threshold` tokens.
pub fn oov_concentration(model: &TokenizerModel, text: &str, split_threshold: usize) -> Result<f64> {
    check_threshold(split_threshold)?;
    Ok(TextCounts::measure(model, text, split_threshold).oov_concentration())
}

fn check_threshold(split_threshold: usize) -> Result<()> {
    if split_threshold < 2 {
        return Err(Error::InvalidArgument(format!(
            "split threshold must be at least 2, got {split_threshold}"
        )));
    }
    Ok(())
}

fn folded_set(text: &str) -> HashSet<String> {
    unigrams(text).map(str::to_lowercase).collect()
}

/// Distinct (case-folded) summary unigrams missing from the source, as
/// `(novel, total)`.
pub fn novel_unigram_counts(source: &str, summary: &str) -> (usize, usize) {
    let src = folded_set(source);
    let sum = folded_set(summary);
    (sum.iter().filter(|u| !src.contains(*u)).count(), sum.len())
}

/// Fraction of distinct summary unigrams absent from the source; 0.0 for an
/// empty summary.
pub fn novel_unigram_concentration(source: &str, summary: &str) -> f64 {
    match novel_unigram_counts(source, summary) {
        (_, 0) => 0.0,
        (n, d) => n as f64 / d as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentStats {
    pub id: String,
    pub sd_token_count: usize,
    pub rs_token_count: usize,
    pub sd_oov_conc: f64,
    pub rs_oov_conc: f64,
    pub fragment_sd: f64,
    pub fragment_rs: f64,
    pub novel_unigram_conc: f64,
}

impl DocumentStats {
    pub fn measure(model: &TokenizerModel, id: &str, sd: &str, rs: &str, split_threshold: usize) -> Self {
        let s = TextCounts::measure(model, sd, split_threshold);
        let r = TextCounts::measure(model, rs, split_threshold);
        DocumentStats {
            id: id.to_string(),
            sd_token_count: s.tokens,
            rs_token_count: r.tokens,
            sd_oov_conc: s.oov_concentration(),
            rs_oov_conc: r.oov_concentration(),
            fragment_sd: s.fragment_score(),
            fragment_rs: r.fragment_score(),
            novel_unigram_conc: novel_unigram_concentration(sd, rs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
}

impl Summary {
    fn of(mut values: Vec<f64>) -> Self {
        if values.is_empty() {
            return Summary { mean: 0.0, median: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        values.sort_by(f64::total_cmp);
        let n = values.len();
        let median = if n % 2 == 1 { values[n / 2] } else { (values[n / 2 - 1] + values[n / 2]) / 2.0 };
        Summary { mean, median }
    }
}

/// Aggregates over a corpus, named after the usual dataset statistics columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub corpus_size: usize,
    pub sd_token_count: Summary,
    pub rs_token_count: Summary,
    pub sd_oov_conc: Summary,
    pub rs_oov_conc: Summary,
    pub fragment_sd: Summary,
    pub fragment_rs: Summary,
    pub novel_unigram_conc: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusReport {
    pub split_threshold: usize,
    pub aggregate: Aggregate,
    pub documents: Vec<DocumentStats>,
    pub skipped_lines: Vec<BadLine>,
}

pub fn corpus_report(model: &TokenizerModel, corpus: &Corpus, split_threshold: usize) -> Result<CorpusReport> {
    check_threshold(split_threshold)?;
    let documents: Vec<DocumentStats> = corpus
        .records
        .par_iter()
        .map(|r| DocumentStats::measure(model, &r.id, &r.sd, &r.rs, split_threshold))
        .collect();
    let col = |f: fn(&DocumentStats) -> f64| Summary::of(documents.iter().map(f).collect());
    let aggregate = Aggregate {
        corpus_size: documents.len(),
        sd_token_count: col(|d| d.sd_token_count as f64),
        rs_token_count: col(|d| d.rs_token_count as f64),
        sd_oov_conc: col(|d| d.sd_oov_conc),
        rs_oov_conc: col(|d| d.rs_oov_conc),
        fragment_sd: col(|d| d.fragment_sd),
        fragment_rs: col(|d| d.fragment_rs),
        novel_unigram_conc: col(|d| d.novel_unigram_conc),
    };
    Ok(CorpusReport { split_threshold, aggregate, documents, skipped_lines: corpus.skipped.clone() })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl CorpusReport {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(self)?;
        out.push(b'\n');
        Ok(out)
    }

    /// One row per document.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "id,sd_token_count,rs_token_count,sd_oov_conc,rs_oov_conc,fragment_sd,fragment_rs,novel_unigram_conc\n",
        );
        for d in &self.documents {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                csv_field(&d.id),
                d.sd_token_count,
                d.rs_token_count,
                d.sd_oov_conc,
                d.rs_oov_conc,
                d.fragment_sd,
                d.fragment_rs,
                d.novel_unigram_conc
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Record;
    use crate::tokenizer::{Merge, PreTokenizerConfig};

    fn words_model(words: &[&str]) -> TokenizerModel {
        // every word in `words` becomes one token by left-to-right merges
        let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        let mut merges = Vec::new();
        for w in words {
            let b = w.as_bytes();
            for end in 2..=b.len() {
                let prefix = b[..end].to_vec();
                if tokens.contains(&prefix) {
                    continue;
                }
                let left = tokens.iter().position(|t| t == &b[..end - 1]).unwrap() as u32;
                tokens.push(prefix);
                merges.push(Merge { left, right: b[end - 1] as u32, result: tokens.len() as u32 - 1 });
            }
        }
        TokenizerModel::from_parts(tokens, merges, PreTokenizerConfig::default()).unwrap()
    }

    #[test]
    fn fragment_floor_and_empty() {
        let m = words_model(&["the", "cat"]);
        assert_eq!(fragment_score(&m, "the cat, the cat."), 1.0);
        assert_eq!(fragment_score(&m, "  ... "), 1.0);
        assert_eq!(fragment_score(&m, "dog"), 3.0);
    }

    #[test]
    fn oov_three_of_ten() {
        let m = words_model(&["a", "the", "cat", "sat"]);
        let text = "the cat sat the cat sat a dog emu yak";
        assert!((oov_concentration(&m, text, 2).unwrap() - 0.3).abs() < 1e-15);
        assert!(oov_concentration(&m, text, 1).is_err());
        assert_eq!(oov_concentration(&m, "the cat", 2).unwrap(), 0.0);
    }

    #[test]
    fn novel_unigrams() {
        assert_eq!(novel_unigram_concentration("The cat sat.", "the CAT"), 0.0);
        assert_eq!(novel_unigram_concentration("a b c", "a b c d"), 0.25);
        assert_eq!(novel_unigram_concentration("a b", "d d d a"), 0.5);
        assert_eq!(novel_unigram_concentration("a", ""), 0.0);
    }

    #[test]
    fn single_document_report() {
        let m = words_model(&["the", "cat"]);
        let corpus = Corpus::from_records(vec![Record {
            id: "x,1".into(),
            sd: "the cat sat".into(),
            rs: "a cat".into(),
        }])
        .unwrap();
        let r = corpus_report(&m, &corpus, 2).unwrap();
        let d = &r.documents[0];
        assert_eq!(d.sd_token_count, 5);
        assert_eq!(r.aggregate.sd_token_count.mean, 5.0);
        assert_eq!(r.aggregate.sd_oov_conc.median, d.sd_oov_conc);
        assert_eq!(r.aggregate.novel_unigram_conc.mean, 0.5);
        assert!(r.to_csv().lines().nth(1).unwrap().starts_with("\"x,1\",5,"));
    }

    #[test]
    fn medians() {
        assert_eq!(Summary::of(vec![3.0, 1.0, 2.0]).median, 2.0);
        assert_eq!(Summary::of(vec![4.0, 1.0, 2.0, 3.0]).median, 2.5);
        assert_eq!(Summary::of(vec![]).mean, 0.0);
    }
}
