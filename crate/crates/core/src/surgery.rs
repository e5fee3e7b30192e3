//! Replacement-then-expansion vocabulary surgery.
//!
//! Domain tokens are placed in domain merge-rank order. A token the base model
//! cannot produce as a single unit is materialized as a chain: the pieces the
//! current model splits it into are merged left to right, and every
//! concatenation missing from the vocabulary becomes a new intermediate token
//! placed right before its product. New tokens take replaceable candidate
//! slots in ascending id order first and are appended once the slots run out.
//!
//! All new merges go after every surviving base merge. Because BPE always
//! applies the lowest-rank merge available, an appended merge can only act on
//! a sequence the surviving base merges have already finished with, so a text
//! that already encodes to a single token keeps doing so.

use std::collections::{BTreeMap, HashSet, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::{roundtrips, CandidateReport};
use crate::domain_vocab::{DomainEntry, DomainVocabulary};
use crate::error::{Error, Result};
use crate::tokenizer::format::{escape_token, parse_key};
use crate::tokenizer::pretok::pieces;
use crate::tokenizer::{display_token, MergeRule, TokenId, TokenizerModel};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replacement {
    pub slot: TokenId,
    pub old_token: Vec<u8>,
    pub new_token: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expansion {
    pub new_id: TokenId,
    pub new_token: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SurgeryPlan {
    pub base_vocab_size: usize,
    /// Number of domain vocabulary entries the plan places.
    pub domain_tokens: usize,
    pub replacements: Vec<Replacement>,
    pub expansions: Vec<Expansion>,
    /// Merges appended after the surviving base merges, in order.
    pub added_merges: Vec<MergeRule>,
    /// Base-tokenizer decomposition of every new token.
    pub chain_parents: BTreeMap<Vec<u8>, Vec<Vec<u8>>>,
    /// Replaced slots whose old token the base model could still emit.
    pub reachable_replaced: Vec<TokenId>,
    /// Surviving base tokens that were reachable but lost a producing merge
    /// to a replaced slot. Only descendants of replaced candidates qualify.
    pub orphaned: Vec<TokenId>,
    /// New tokens that are single units inside a pre-tokenizer piece but
    /// not for their own text (partial UTF-8, or spanning a piece boundary).
    pub context_only: Vec<TokenId>,
}

impl SurgeryPlan {
    pub fn total_new_tokens(&self) -> usize {
        self.replacements.len() + self.expansions.len()
    }

    pub fn final_vocab_size(&self) -> usize {
        self.base_vocab_size + self.expansions.len()
    }

    /// New tokens in placement order with their ids.
    pub fn new_tokens(&self) -> Vec<(TokenId, &[u8])> {
        let mut out: Vec<(TokenId, &[u8])> = self
            .replacements
            .iter()
            .map(|r| (r.slot, r.new_token.as_slice()))
            .chain(self.expansions.iter().map(|e| (e.new_id, e.new_token.as_slice())))
            .collect();
        out.sort_by_key(|&(id, _)| id);
        out
    }

    pub fn report(&self, hidden_dim: usize) -> SurgeryReport {
        SurgeryReport {
            base_vocab_size: self.base_vocab_size,
            final_vocab_size: self.final_vocab_size(),
            replaced_count: self.replacements.len(),
            expanded_count: self.expansions.len(),
            total_new_tokens: self.total_new_tokens(),
            domain_tokens: self.domain_tokens,
            intermediate_tokens: self.total_new_tokens().saturating_sub(self.domain_tokens),
            parameter_delta: parameter_delta(self, hidden_dim),
            hidden_dim,
            reachable_replaced: self.reachable_replaced.clone(),
            orphaned: self.orphaned.clone(),
            context_only: self.context_only.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurgeryReport {
    pub base_vocab_size: usize,
    pub final_vocab_size: usize,
    pub replaced_count: usize,
    pub expanded_count: usize,
    pub total_new_tokens: usize,
    pub domain_tokens: usize,
    pub intermediate_tokens: usize,
    pub parameter_delta: u64,
    pub hidden_dim: usize,
    /// Replaced tokens that were reachable: texts containing them now encode differently.
    pub reachable_replaced: Vec<TokenId>,
    #[serde(default)]
    pub orphaned: Vec<TokenId>,
    #[serde(default)]
    pub context_only: Vec<TokenId>,
}

/// Extra embedding plus unembedding parameters: `2 * expansions * hidden_dim`.
pub fn parameter_delta(plan: &SurgeryPlan, hidden_dim: usize) -> u64 {
    expansion_parameters(plan.expansions.len(), hidden_dim)
}

pub fn expansion_parameters(expanded: usize, hidden_dim: usize) -> u64 {
    2 * expanded as u64 * hidden_dim as u64
}

/// Vocabulary and parameter accounting for a replacement budget, without
/// running a plan: replaced = min(candidates, total_new).
pub fn accounting(
    base_vocab_size: usize,
    candidates: usize,
    total_new_tokens: usize,
    hidden_dim: usize,
) -> SurgeryReport {
    let replaced = candidates.min(total_new_tokens);
    let expanded = total_new_tokens - replaced;
    SurgeryReport {
        base_vocab_size,
        final_vocab_size: base_vocab_size + expanded,
        replaced_count: replaced,
        expanded_count: expanded,
        total_new_tokens,
        domain_tokens: total_new_tokens,
        intermediate_tokens: 0,
        parameter_delta: expansion_parameters(expanded, hidden_dim),
        hidden_dim,
        reachable_replaced: Vec::new(),
        orphaned: Vec::new(),
        context_only: Vec::new(),
    }
}

/// Fraction of expansion parameters saved by replacement: `1 - with / without`.
pub fn parameter_savings(with_replace: u64, without_replace: u64) -> f64 {
    if without_replace == 0 {
        return 0.0;
    }
    1.0 - with_replace as f64 / without_replace as f64
}

/// Mutable model used while planning.
struct Workspace {
    model: TokenizerModel,
    free_slots: VecDeque<TokenId>,
    placed: Vec<(TokenId, Vec<u8>)>,
    added: Vec<(TokenId, TokenId, TokenId)>,
}

impl Workspace {
    fn new(base: &TokenizerModel, slots: &[TokenId]) -> Self {
        let mut model = base.clone();
        let used: HashSet<TokenId> = slots.iter().copied().collect();
        model.retain_merges(|m| {
            !(used.contains(&m.result) || used.contains(&m.left) || used.contains(&m.right))
        });
        for &s in slots {
            model.vacate(s);
        }
        Self { model, free_slots: slots.iter().copied().collect(), placed: Vec::new(), added: Vec::new() }
    }

    fn place(&mut self, token: Vec<u8>) -> TokenId {
        let id = match self.free_slots.pop_front() {
            Some(slot) => {
                self.model.replace_token(slot, token.clone());
                slot
            }
            None => self.model.push_token(token.clone()),
        };
        self.placed.push((id, token));
        id
    }

    fn concat(&self, l: TokenId, r: TokenId) -> Vec<u8> {
        let mut joined = self.model.token(l).unwrap_or_default().to_vec();
        joined.extend_from_slice(self.model.token(r).unwrap_or_default());
        joined
    }

    /// Leftmost adjacent pair whose concatenation could stand alone as text,
    /// else the leftmost pair. Any pair makes progress: its merge is the
    /// newest, so it fires once everything older is done.
    fn pick_pair(&self, enc: &[TokenId]) -> (TokenId, TokenId) {
        enc.windows(2)
            .map(|w| (w[0], w[1]))
            .find(|&(l, r)| standalone(&self.concat(l, r)))
            .unwrap_or((enc[0], enc[1]))
    }

    /// Make `token` encode to a single id, returning newly created tokens.
    fn materialize(&mut self, token: &[u8]) -> Result<Vec<Vec<u8>>> {
        let mut created = Vec::new();
        for _ in 0..token.len() {
            let enc = self.model.encode_piece(token);
            if enc.len() == 1 {
                return Ok(created);
            }
            let (l, r) = self.pick_pair(&enc);
            if self.model.merge_rank(l, r).is_some() {
                return Err(Error::Plan(format!(
                    "merge for {} is present but did not fire",
                    display_token(token)
                )));
            }
            let joined = self.concat(l, r);
            let result = match self.model.id(&joined) {
                Some(id) => id,
                None => {
                    created.push(joined.clone());
                    self.place(joined)
                }
            };
            self.model.push_merge(l, r, result);
            self.added.push((l, r, result));
        }
        if self.model.encode_piece(token).len() == 1 {
            Ok(created)
        } else {
            Err(Error::Plan(format!("could not materialize {}", display_token(token))))
        }
    }
}

/// True when the bytes are valid UTF-8 and pre-tokenize to a single piece,
/// the condition for a token to be emitted for its own text.
pub fn standalone(token: &[u8]) -> bool {
    std::str::from_utf8(token).is_ok() && pieces(token).len() == 1
}

/// Tokens (in order) that must be created so `token` becomes a single unit,
/// given a model that already holds the `placed` strings. The last element is
/// `token` itself unless it is already present.
pub fn materialize_merge_chain(model: &TokenizerModel, token: &[u8]) -> Result<Vec<Vec<u8>>> {
    let enc = model.encode_piece(token);
    if enc.len() == 1 {
        return Err(Error::Plan(format!(
            "{} is already a single unit",
            display_token(token)
        )));
    }
    let mut ws = Workspace::new(model, &[]);
    ws.materialize(token)
}

fn build(base: &TokenizerModel, slots: &[TokenId], order: &[&DomainEntry]) -> Result<Workspace> {
    let mut ws = Workspace::new(base, slots);
    for entry in order {
        if ws.model.contains(&entry.token) {
            continue;
        }
        ws.materialize(&entry.token)?;
    }
    // Later chains can create intermediates whose own spelling does not
    // reach them; give those a direct path too.
    let mut queue: VecDeque<Vec<u8>> = ws.placed.iter().map(|(_, t)| t.clone()).collect();
    while let Some(tok) = queue.pop_front() {
        if ws.model.encode_piece(&tok).len() != 1 {
            let created = ws.materialize(&tok)?;
            queue.extend(created);
        }
    }
    Ok(ws)
}

const MAX_ROUNDS: usize = 16;

/// Plan the surgery of `base` given its candidate report and a domain vocabulary.
pub fn plan_surgery(
    base: &TokenizerModel,
    candidates: &CandidateReport,
    domain: &DomainVocabulary,
) -> Result<SurgeryPlan> {
    if candidates.vocab_size != base.len() {
        return Err(Error::Plan(format!(
            "candidate report covers {} tokens, base has {}",
            candidates.vocab_size,
            base.len()
        )));
    }
    for e in &domain.entries {
        if base.contains(&e.token) {
            return Err(Error::Plan(format!(
                "domain token {} already exists in the base vocabulary",
                display_token(&e.token)
            )));
        }
    }
    let slots: Vec<TokenId> = candidates.replaceable.iter().copied().collect();
    if let Some(&id) = slots.iter().find(|&&id| TokenizerModel::is_byte_token(id)) {
        return Err(Error::Plan(format!("candidate slot {id} is a byte token")));
    }
    if let Some(&id) = slots.iter().find(|&&id| id as usize >= base.len()) {
        return Err(Error::Plan(format!("candidate slot {id} is out of range")));
    }
    let order = domain.in_merge_order();

    // The number of slots used depends on how many tokens the chains need,
    // which in turn depends on which merges were removed with the slots.
    let mut used = slots.len();
    for _ in 0..MAX_ROUNDS {
        let ws = build(base, &slots[..used], &order)?;
        let total = ws.placed.len();
        let want = total.min(slots.len());
        if want == used {
            return Ok(finish(base, ws, order.len()));
        }
        used = want;
    }
    Err(Error::Plan("slot assignment did not converge".into()))
}

fn finish(base: &TokenizerModel, ws: Workspace, domain_tokens: usize) -> SurgeryPlan {
    let base_len = base.len();
    let mut replacements = Vec::new();
    let mut expansions = Vec::new();
    let mut chain_parents = BTreeMap::new();
    let mut reachable_replaced = Vec::new();
    for (id, tok) in &ws.placed {
        let parents = base
            .encode_bytes(tok)
            .into_iter()
            .map(|p| base.token(p).unwrap_or_default().to_vec())
            .collect();
        chain_parents.insert(tok.clone(), parents);
        if (*id as usize) < base_len {
            if roundtrips(base, *id) {
                reachable_replaced.push(*id);
            }
            replacements.push(Replacement {
                slot: *id,
                old_token: base.token(*id).unwrap_or_default().to_vec(),
                new_token: tok.clone(),
            });
        } else {
            expansions.push(Expansion { new_id: *id, new_token: tok.clone() });
        }
    }
    let surviving = ws.model.merges().len() - ws.added.len();
    let added_merges = ws
        .added
        .iter()
        .enumerate()
        .map(|(i, &(l, r, res))| MergeRule {
            left: ws.model.token(l).unwrap_or_default().to_vec(),
            right: ws.model.token(r).unwrap_or_default().to_vec(),
            result: ws.model.token(res).unwrap_or_default().to_vec(),
            rank: surviving + i,
        })
        .collect();
    reachable_replaced.sort_unstable();
    let replaced: HashSet<TokenId> = replacements.iter().map(|r| r.slot).collect();
    let orphaned = (0..base_len as TokenId)
        .into_par_iter()
        .filter(|id| !replaced.contains(id) && roundtrips(base, *id) && !roundtrips(&ws.model, *id))
        .collect();
    let mut context_only: Vec<TokenId> =
        ws.placed.iter().filter(|(_, t)| !standalone(t)).map(|&(id, _)| id).collect();
    context_only.sort_unstable();
    SurgeryPlan {
        base_vocab_size: base_len,
        domain_tokens,
        replacements,
        expansions,
        added_merges,
        chain_parents,
        reachable_replaced,
        orphaned,
        context_only,
    }
}

/// Apply a plan to the base model it was computed against.
pub fn apply_surgery(base: &TokenizerModel, plan: &SurgeryPlan) -> Result<TokenizerModel> {
    let mismatch = |msg: String| Error::SurgeryValidation(msg);
    if plan.base_vocab_size != base.len() {
        return Err(mismatch(format!(
            "plan expects a base of {} tokens, got {}",
            plan.base_vocab_size,
            base.len()
        )));
    }
    for r in &plan.replacements {
        if base.token(r.slot) != Some(r.old_token.as_slice()) {
            return Err(mismatch(format!("slot {} does not hold the planned old token", r.slot)));
        }
    }
    for (i, e) in plan.expansions.iter().enumerate() {
        if e.new_id as usize != base.len() + i {
            return Err(mismatch(format!("expansion {i} has id {}", e.new_id)));
        }
    }

    let mut model = base.clone();
    let used: HashSet<TokenId> = plan.replacements.iter().map(|r| r.slot).collect();
    model.retain_merges(|m| {
        !(used.contains(&m.result) || used.contains(&m.left) || used.contains(&m.right))
    });
    for r in &plan.replacements {
        model.vacate(r.slot);
    }
    for r in &plan.replacements {
        model.replace_token(r.slot, r.new_token.clone());
    }
    for e in &plan.expansions {
        model.push_token(e.new_token.clone());
    }
    for m in &plan.added_merges {
        let id = |t: &[u8]| {
            model.id(t).ok_or_else(|| mismatch(format!("merge references missing {}", display_token(t))))
        };
        let (l, r, res) = (id(&m.left)?, id(&m.right)?, id(&m.result)?);
        model.push_merge(l, r, res);
    }
    model.revalidate().map_err(|e| mismatch(e.to_string()))?;

    for (id, tok) in plan.new_tokens() {
        if model.encode_piece(tok) != [id] {
            return Err(mismatch(format!("new token {} is not reachable", display_token(tok))));
        }
    }
    Ok(model)
}

#[derive(Serialize, Deserialize)]
struct PlanFile {
    base_vocab_size: usize,
    domain_tokens: usize,
    replacements: Vec<ReplacementLine>,
    expansions: Vec<ExpansionLine>,
    added_merges: Vec<String>,
    chain_parents: BTreeMap<String, Vec<String>>,
    reachable_replaced: Vec<TokenId>,
    #[serde(default)]
    orphaned: Vec<TokenId>,
    #[serde(default)]
    context_only: Vec<TokenId>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    provenance: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct ReplacementLine {
    slot: TokenId,
    old_token: String,
    new_token: String,
}

#[derive(Serialize, Deserialize)]
struct ExpansionLine {
    new_id: TokenId,
    new_token: String,
}

fn key(bytes: &[u8]) -> String {
    if bytes.len() == 1 {
        format!("<0x{:02X}>", bytes[0])
    } else {
        escape_token(bytes)
    }
}

impl SurgeryPlan {
    pub fn to_json(&self, provenance: &BTreeMap<String, String>) -> Result<Vec<u8>> {
        let file = PlanFile {
            base_vocab_size: self.base_vocab_size,
            domain_tokens: self.domain_tokens,
            replacements: self
                .replacements
                .iter()
                .map(|r| ReplacementLine {
                    slot: r.slot,
                    old_token: key(&r.old_token),
                    new_token: key(&r.new_token),
                })
                .collect(),
            expansions: self
                .expansions
                .iter()
                .map(|e| ExpansionLine { new_id: e.new_id, new_token: key(&e.new_token) })
                .collect(),
            added_merges: self
                .added_merges
                .iter()
                .map(|m| format!("{} {}", key(&m.left), key(&m.right)))
                .collect(),
            chain_parents: self
                .chain_parents
                .iter()
                .map(|(k, v)| (key(k), v.iter().map(|p| key(p)).collect()))
                .collect(),
            reachable_replaced: self.reachable_replaced.clone(),
            orphaned: self.orphaned.clone(),
            context_only: self.context_only.clone(),
            provenance: provenance.clone(),
        };
        let mut out = serde_json::to_vec_pretty(&file)?;
        out.push(b'\n');
        Ok(out)
    }

    /// Parse a plan; returns it with the provenance block it carried.
    pub fn from_json(bytes: &[u8]) -> Result<(Self, BTreeMap<String, String>)> {
        let f: PlanFile = serde_json::from_slice(bytes)
            .map_err(|e| Error::Malformed(format!("surgery plan: {e}")))?;
        let base_merges = f.added_merges.len();
        let mut added_merges = Vec::with_capacity(base_merges);
        for (i, line) in f.added_merges.iter().enumerate() {
            let (l, r) = line
                .split_once(' ')
                .ok_or_else(|| Error::Malformed(format!("surgery plan merge {line:?}")))?;
            let (left, right) = (parse_key(l)?, parse_key(r)?);
            let result = [left.as_slice(), right.as_slice()].concat();
            // rank is relative here; apply_surgery re-derives absolute ranks
            added_merges.push(MergeRule { left, right, result, rank: i });
        }
        let plan = SurgeryPlan {
            base_vocab_size: f.base_vocab_size,
            domain_tokens: f.domain_tokens,
            replacements: f
                .replacements
                .into_iter()
                .map(|r| {
                    Ok(Replacement {
                        slot: r.slot,
                        old_token: parse_key(&r.old_token)?,
                        new_token: parse_key(&r.new_token)?,
                    })
                })
                .collect::<Result<_>>()?,
            expansions: f
                .expansions
                .into_iter()
                .map(|e| Ok(Expansion { new_id: e.new_id, new_token: parse_key(&e.new_token)? }))
                .collect::<Result<_>>()?,
            added_merges,
            chain_parents: f
                .chain_parents
                .into_iter()
                .map(|(k, v)| {
                    Ok((parse_key(&k)?, v.iter().map(|p| parse_key(p)).collect::<Result<_>>()?))
                })
                .collect::<Result<_>>()?,
            reachable_replaced: f.reachable_replaced,
            orphaned: f.orphaned,
            context_only: f.context_only,
        };
        Ok((plan, f.provenance))
    }
}
