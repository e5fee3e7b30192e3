//! Replacement candidates: tokens that are unreachable or undertrained, minus
//! those whose removal would break a merge path to a token that stays.
//!
//! A token is unreachable when `encode(decode([t])) != [t]`. It is
//! undertrained when its embedding row norm falls strictly below a threshold
//! computed over the eligible population (byte tokens, partial UTF-8 tokens,
//! unreachable tokens and user-shielded tokens are not eligible). The union of
//! both sets is then pruned with the merge graph: a candidate survives only if
//! every token reachable from it through merges is itself a candidate.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::tokenizer::format::token_key;
use crate::tokenizer::{TokenId, TokenizerModel};

pub type TokenSet = BTreeSet<TokenId>;

/// Every id whose decoded text does not re-encode to that single id.
/// Byte tokens are never reported.
pub fn find_unreachable(model: &TokenizerModel) -> TokenSet {
    (crate::tokenizer::BYTE_TOKENS as TokenId..model.len() as TokenId)
        .into_par_iter()
        .filter(|&id| !roundtrips(model, id))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// `encode(decode([id])) == [id]`, decoding leniently as text.
pub fn roundtrips(model: &TokenizerModel, id: TokenId) -> bool {
    match model.decode(&[id]) {
        Ok(text) => model.encode(&text) == [id],
        Err(_) => false,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormFlags {
    pub partial_utf8: bool,
    pub byte_fallback: bool,
    pub unreachable: bool,
    pub user_excluded: bool,
}

impl NormFlags {
    pub fn any(&self) -> bool {
        self.partial_utf8 || self.byte_fallback || self.unreachable || self.user_excluded
    }
}

/// Per-token L2 norms plus the flags that keep a token out of the
/// undertrained population.
#[derive(Debug, Clone, PartialEq)]
pub struct NormProfile {
    pub norms: Vec<f64>,
    pub flags: Vec<NormFlags>,
}

impl NormProfile {
    pub fn compute(
        model: &TokenizerModel,
        matrix: &EmbeddingMatrix,
        unreachable: &TokenSet,
        user_excluded: &TokenSet,
    ) -> Result<Self> {
        if matrix.rows() != model.len() {
            return Err(Error::Embedding(format!(
                "matrix has {} rows, vocabulary has {} tokens",
                matrix.rows(),
                model.len()
            )));
        }
        let norms = matrix.row_norms();
        let flags = model
            .tokens()
            .iter()
            .enumerate()
            .map(|(id, tok)| {
                let id = id as TokenId;
                NormFlags {
                    partial_utf8: std::str::from_utf8(tok).is_err(),
                    byte_fallback: TokenizerModel::is_byte_token(id),
                    unreachable: unreachable.contains(&id),
                    user_excluded: user_excluded.contains(&id),
                }
            })
            .collect();
        Ok(Self { norms, flags })
    }

    /// Unflagged profile over raw norms.
    pub fn from_norms(norms: Vec<f64>) -> Self {
        let flags = vec![NormFlags::default(); norms.len()];
        Self { norms, flags }
    }

    pub fn eligible(&self) -> impl Iterator<Item = (TokenId, f64)> + '_ {
        self.norms
            .iter()
            .zip(&self.flags)
            .enumerate()
            .filter(|(_, (_, f))| !f.any())
            .map(|(i, (&n, _))| (i as TokenId, n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum Threshold {
    /// Percentile in (0, 100) of the eligible norm distribution, linearly
    /// interpolated between closest ranks.
    Percentile(f64),
    Absolute(f64),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Percentile(2.0)
    }
}

/// Resolve a threshold configuration to a norm cutoff.
pub fn resolve_threshold(profile: &NormProfile, threshold: Threshold) -> Result<f64> {
    match threshold {
        Threshold::Absolute(v) if v.is_finite() => Ok(v),
        Threshold::Absolute(v) => Err(Error::InvalidArgument(format!("threshold {v} is not finite"))),
        Threshold::Percentile(p) if p > 0.0 && p < 100.0 => {
            let mut population: Vec<f64> = profile.eligible().map(|(_, n)| n).collect();
            if population.is_empty() {
                return Err(Error::EmptyPopulation);
            }
            population.sort_by(f64::total_cmp);
            let pos = p / 100.0 * (population.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            Ok(population[lo] + (population[hi] - population[lo]) * frac)
        }
        Threshold::Percentile(p) => Err(Error::InvalidArgument(format!(
            "percentile must lie in (0, 100), got {p}"
        ))),
    }
}

/// Eligible tokens whose norm is strictly below the resolved threshold.
pub fn find_undertrained(profile: &NormProfile, threshold: Threshold) -> Result<TokenSet> {
    let cutoff = resolve_threshold(profile, threshold)?;
    Ok(profile.eligible().filter(|&(_, n)| n < cutoff).map(|(id, _)| id).collect())
}

/// Contributor → product graph over token ids, one edge per merge operand.
#[derive(Debug, Clone)]
pub struct MergeDag {
    children: Vec<Vec<TokenId>>,
    edge_count: usize,
    topo: Vec<TokenId>,
}

impl MergeDag {
    pub fn node_count(&self) -> usize {
        self.children.len()
    }

    /// Number of edges, counting both operands of every merge.
    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn children(&self, id: TokenId) -> &[TokenId] {
        &self.children[id as usize]
    }

    /// Nodes in an order where every contributor precedes its products.
    pub fn topological_order(&self) -> &[TokenId] {
        &self.topo
    }

    /// All nodes reachable from `id`, excluding `id` itself.
    pub fn descendants(&self, id: TokenId) -> TokenSet {
        let mut seen = TokenSet::new();
        let mut stack: Vec<TokenId> = self.children(id).to_vec();
        while let Some(n) = stack.pop() {
            if seen.insert(n) {
                stack.extend_from_slice(self.children(n));
            }
        }
        seen
    }
}

pub fn build_merge_dag(model: &TokenizerModel) -> Result<MergeDag> {
    let n = model.len();
    let mut children = vec![Vec::new(); n];
    let mut indegree = vec![0usize; n];
    for m in model.merges() {
        for op in [m.left, m.right] {
            children[op as usize].push(m.result);
            indegree[m.result as usize] += 1;
        }
    }
    let edge_count = 2 * model.merges().len();

    let mut queue: VecDeque<TokenId> =
        (0..n).filter(|&i| indegree[i] == 0).map(|i| i as TokenId).collect();
    let mut topo = Vec::with_capacity(n);
    while let Some(v) = queue.pop_front() {
        topo.push(v);
        for &c in &children[v as usize] {
            let d = &mut indegree[c as usize];
            *d -= 1;
            if *d == 0 {
                queue.push_back(c);
            }
        }
    }
    if topo.len() != n {
        let stuck = (0..n).find(|&i| indegree[i] > 0).unwrap_or(0);
        return Err(Error::Cycle(stuck as TokenId));
    }
    Ok(MergeDag { children, edge_count, topo })
}

/// Candidates with at least one descendant outside the candidate set.
pub fn filter_by_descendants(dag: &MergeDag, candidates: &TokenSet) -> TokenSet {
    let n = dag.node_count();
    let mut is_cand = vec![false; n];
    for &c in candidates {
        if (c as usize) < n {
            is_cand[c as usize] = true;
        }
    }
    // closed[v]: every node reachable from v is a candidate
    let mut closed = vec![true; n];
    for &v in dag.topological_order().iter().rev() {
        closed[v as usize] = dag
            .children(v)
            .iter()
            .all(|&c| is_cand[c as usize] && closed[c as usize]);
    }
    candidates.iter().copied().filter(|&c| !closed[c as usize]).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateConfig {
    pub threshold: Threshold,
    /// Token ids shielded from replacement (special tokens and the like).
    #[serde(default)]
    pub user_excluded: TokenSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Unreachable,
    Undertrained,
    /// Dropped because a descendant in the merge graph is not a candidate.
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub id: TokenId,
    pub token: String,
    pub reasons: Vec<Reason>,
    pub norm: f64,
}

/// Outcome of candidate discovery.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateReport {
    pub vocab_size: usize,
    pub threshold: Threshold,
    pub threshold_value: f64,
    pub unreachable: TokenSet,
    pub undertrained: TokenSet,
    pub union: TokenSet,
    pub excluded: TokenSet,
    /// The replaceable set: `(unreachable ∪ undertrained) \ excluded`.
    pub replaceable: TokenSet,
    pub entries: Vec<CandidateEntry>,
    pub provenance: BTreeMap<String, String>,
}

pub fn candidate_set(
    model: &TokenizerModel,
    embeddings: &EmbeddingMatrix,
    cfg: &CandidateConfig,
) -> Result<CandidateReport> {
    if embeddings.rows() != model.len() {
        return Err(Error::Embedding(format!(
            "matrix has {} rows, vocabulary has {} tokens",
            embeddings.rows(),
            model.len()
        )));
    }
    let mut unreachable = find_unreachable(model);
    unreachable.retain(|id| !cfg.user_excluded.contains(id));
    let profile = NormProfile::compute(model, embeddings, &unreachable, &cfg.user_excluded)?;
    let threshold_value = resolve_threshold(&profile, cfg.threshold)?;
    let undertrained = find_undertrained(&profile, cfg.threshold)?;
    let union: TokenSet = unreachable.union(&undertrained).copied().collect();
    let dag = build_merge_dag(model)?;
    let excluded = filter_by_descendants(&dag, &union);
    let replaceable: TokenSet = union.difference(&excluded).copied().collect();

    let entries = union
        .iter()
        .map(|&id| {
            let mut reasons = Vec::new();
            if unreachable.contains(&id) {
                reasons.push(Reason::Unreachable);
            }
            if undertrained.contains(&id) {
                reasons.push(Reason::Undertrained);
            }
            if excluded.contains(&id) {
                reasons.push(Reason::Excluded);
            }
            CandidateEntry {
                id,
                token: token_key(id, model.token(id).unwrap_or_default()),
                reasons,
                norm: profile.norms[id as usize],
            }
        })
        .collect();

    Ok(CandidateReport {
        vocab_size: model.len(),
        threshold: cfg.threshold,
        threshold_value,
        unreachable,
        undertrained,
        union,
        excluded,
        replaceable,
        entries,
        provenance: BTreeMap::new(),
    })
}

#[derive(Serialize, Deserialize)]
struct ReportFile {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    provenance: BTreeMap<String, String>,
    vocab_size: usize,
    threshold: Threshold,
    threshold_value: f64,
    counts: Counts,
    #[serde(rename = "final")]
    replaceable: Vec<TokenId>,
    entries: Vec<CandidateEntry>,
}

#[derive(Serialize, Deserialize)]
struct Counts {
    unreachable: usize,
    undertrained: usize,
    union: usize,
    excluded: usize,
    #[serde(rename = "final")]
    replaceable: usize,
}

impl CandidateReport {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        let file = ReportFile {
            provenance: self.provenance.clone(),
            vocab_size: self.vocab_size,
            threshold: self.threshold,
            threshold_value: self.threshold_value,
            counts: Counts {
                unreachable: self.unreachable.len(),
                undertrained: self.undertrained.len(),
                union: self.union.len(),
                excluded: self.excluded.len(),
                replaceable: self.replaceable.len(),
            },
            replaceable: self.replaceable.iter().copied().collect(),
            entries: self.entries.clone(),
        };
        let mut out = serde_json::to_vec_pretty(&file)?;
        out.push(b'\n');
        Ok(out)
    }

    /// Rebuild a report from its JSON form; sets are recovered from the entries.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let file: ReportFile =
            serde_json::from_slice(bytes).map_err(|e| Error::Malformed(format!("candidate report: {e}")))?;
        let with = |r: Reason| -> TokenSet {
            file.entries.iter().filter(|e| e.reasons.contains(&r)).map(|e| e.id).collect()
        };
        let unreachable = with(Reason::Unreachable);
        let undertrained = with(Reason::Undertrained);
        let excluded = with(Reason::Excluded);
        let union: TokenSet = file.entries.iter().map(|e| e.id).collect();
        let replaceable: TokenSet = union.difference(&excluded).copied().collect();
        let listed: TokenSet = file.replaceable.iter().copied().collect();
        if listed != replaceable {
            return Err(Error::Malformed(
                "candidate report \"final\" list disagrees with its entries".into(),
            ));
        }
        Ok(Self {
            vocab_size: file.vocab_size,
            threshold: file.threshold,
            threshold_value: file.threshold_value,
            unreachable,
            undertrained,
            union,
            excluded,
            replaceable,
            entries: file.entries,
            provenance: file.provenance,
        })
    }

    /// Check the set algebra and, given the merge graph, the closure property.
    pub fn check_invariants(&self, dag: &MergeDag) -> std::result::Result<(), String> {
        let union: TokenSet = self.unreachable.union(&self.undertrained).copied().collect();
        if union != self.union {
            return Err("union differs from unreachable ∪ undertrained".into());
        }
        let expected: TokenSet = union.difference(&self.excluded).copied().collect();
        if expected != self.replaceable {
            return Err("final differs from union \\ excluded".into());
        }
        if let Some(id) = self.replaceable.iter().find(|&&id| TokenizerModel::is_byte_token(id)) {
            return Err(format!("byte token {id} is a final candidate"));
        }
        for &id in &self.replaceable {
            if let Some(d) = dag.descendants(id).into_iter().find(|d| !self.union.contains(d)) {
                return Err(format!("final candidate {id} has non-candidate descendant {d}"));
            }
        }
        Ok(())
    }
}
