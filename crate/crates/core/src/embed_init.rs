//! Initialization of new embedding and unembedding rows as the mean of the
//! rows of the token's pieces under the original tokenizer.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingMatrix, MatrixRole};
use crate::error::{Error, Result};
use crate::surgery::SurgeryPlan;
use crate::tokenizer::format::escape_token;
use crate::tokenizer::{TokenId, TokenizerModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitEntry {
    pub id: TokenId,
    pub token: String,
    pub constituents: Vec<TokenId>,
    pub replaced: bool,
    pub embedding_norm: f64,
    pub unembedding_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitReport {
    pub replaced_rows: usize,
    pub appended_rows: usize,
    pub entries: Vec<InitEntry>,
}

/// Arithmetic mean of `rows` of `m`, accumulated in f64.
pub fn mean_row(m: &EmbeddingMatrix, rows: &[TokenId]) -> Result<Vec<f32>> {
    if rows.is_empty() {
        return Err(Error::Embedding("empty constituent list".into()));
    }
    let mut acc = vec![0f64; m.cols()];
    for &r in rows {
        if r as usize >= m.rows() {
            return Err(Error::IdOutOfRange { id: r, size: m.rows() });
        }
        for (a, &v) in acc.iter_mut().zip(m.row(r as usize)) {
            *a += v as f64;
        }
    }
    let n = rows.len() as f64;
    let out: Vec<f32> = acc.into_iter().map(|a| (a / n) as f32).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Embedding("non-finite mean".into()));
    }
    Ok(out)
}

fn l2(row: &[f32]) -> f64 {
    row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}

/// Write the rows for every token the plan places; everything else is copied.
pub fn init_new_rows(
    base: &TokenizerModel,
    plan: &SurgeryPlan,
    e: &EmbeddingMatrix,
    u: &EmbeddingMatrix,
) -> Result<(EmbeddingMatrix, EmbeddingMatrix, InitReport)> {
    if e.role() != MatrixRole::Embedding || u.role() != MatrixRole::Unembedding {
        return Err(Error::Embedding("expected an embedding and an unembedding matrix".into()));
    }
    if e.rows() != base.len() || u.rows() != base.len() {
        return Err(Error::Embedding(format!(
            "matrices have {} and {} rows, tokenizer has {} tokens",
            e.rows(),
            u.rows(),
            base.len()
        )));
    }
    if e.cols() != u.cols() {
        return Err(Error::Embedding(format!(
            "hidden dimensions differ: {} vs {}",
            e.cols(),
            u.cols()
        )));
    }
    if plan.base_vocab_size != base.len() {
        return Err(Error::Embedding("plan was computed for a different tokenizer".into()));
    }

    let new_tokens = plan.new_tokens();
    let computed: Vec<(InitEntry, Vec<f32>, Vec<f32>)> = new_tokens
        .par_iter()
        .map(|&(id, tok)| {
            let constituents = base.encode_bytes(tok);
            let re = mean_row(e, &constituents)?;
            let ru = mean_row(u, &constituents)?;
            let entry = InitEntry {
                id,
                token: escape_token(tok),
                constituents,
                replaced: (id as usize) < base.len(),
                embedding_norm: l2(&re),
                unembedding_norm: l2(&ru),
            };
            Ok((entry, re, ru))
        })
        .collect::<Result<_>>()?;

    let mut e2 = e.clone();
    let mut u2 = u.clone();
    e2.resize_rows(plan.final_vocab_size());
    u2.resize_rows(plan.final_vocab_size());
    let mut entries = Vec::with_capacity(computed.len());
    for (entry, re, ru) in computed {
        e2.row_mut(entry.id as usize).copy_from_slice(&re);
        u2.row_mut(entry.id as usize).copy_from_slice(&ru);
        entries.push(entry);
    }
    let replaced_rows = entries.iter().filter(|x| x.replaced).count();
    let report = InitReport { replaced_rows, appended_rows: entries.len() - replaced_rows, entries };
    Ok((e2, u2, report))
}

/// Rows whose norm exceeds the largest norm among their constituents.
pub fn norm_bound_violations(
    report: &InitReport,
    e_base: &EmbeddingMatrix,
    e_new: &EmbeddingMatrix,
) -> Vec<TokenId> {
    let norms = e_base.row_norms();
    report
        .entries
        .iter()
        .filter(|x| {
            let bound = x.constituents.iter().map(|&c| norms[c as usize]).fold(0.0, f64::max);
            l2(e_new.row(x.id as usize)) > bound * (1.0 + 1e-6)
        })
        .map(|x| x.id)
        .collect()
}
