#![allow(dead_code)]

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vocab_surgeon::corpus::{Corpus, Record};
use vocab_surgeon::tokenizer::pretok::pieces;
use vocab_surgeon::{
    train_bpe, EmbeddingMatrix, MatrixRole, Merge, PreTokenizerConfig, TokenId, TokenizerModel,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Quadratic reference encoder: rescan every adjacent pair after each merge.
pub struct ReferenceEncoder<'a> {
    model: &'a TokenizerModel,
    ranks: HashMap<(TokenId, TokenId), (usize, TokenId)>,
}

impl<'a> ReferenceEncoder<'a> {
    pub fn new(model: &'a TokenizerModel) -> Self {
        let mut ranks = HashMap::new();
        for (rank, m) in model.merges().iter().enumerate() {
            ranks.entry((m.left, m.right)).or_insert((rank, m.result));
        }
        Self { model, ranks }
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let bytes = if self.model.pretokenizer().lowercase {
            text.to_ascii_lowercase().into_bytes()
        } else {
            text.as_bytes().to_vec()
        };
        let mut out = Vec::new();
        for p in pieces(&bytes) {
            let mut seq: Vec<TokenId> = bytes[p.range].iter().map(|&b| b as TokenId).collect();
            loop {
                let best = (0..seq.len().saturating_sub(1))
                    .filter_map(|i| self.ranks.get(&(seq[i], seq[i + 1])).map(|&(r, res)| (r, i, res)))
                    .min();
                match best {
                    Some((_, i, res)) => {
                        seq[i] = res;
                        seq.remove(i + 1);
                    }
                    None => break,
                }
            }
            out.extend(seq);
        }
        out
    }
}

pub fn reference_encode(model: &TokenizerModel, text: &str) -> Vec<TokenId> {
    ReferenceEncoder::new(model).encode(text)
}

const ALPHABET: &[&str] = &[
    "a", "b", "c", "d", "e", "o", "s", "t", "r", "n", " ", " ", "  ", "\n", ".", ",", "-", "'", "é",
    "ß", "中", "文", "😀", "0", "7", "\t", "A", "Z",
];

pub fn random_text(rng: &mut ChaCha8Rng, max_len: usize) -> String {
    let n = rng.gen_range(0..=max_len);
    (0..n).map(|_| *ALPHABET.choose(rng).unwrap()).collect()
}

/// Tokenizer with random merges over a small alphabet and a few orphan
/// tokens no merge produces. Operands are always already produced; a
/// concatenation that exists gets a second producer.
pub fn random_merge_tokenizer(rng: &mut ChaCha8Rng, max_tokens: usize) -> TokenizerModel {
    let start = TokenizerModel::byte_level(PreTokenizerConfig::default());
    let target = rng.gen_range(BYTE_TARGET + 40..=max_tokens);
    extend_randomly(rng, &start, target)
}

/// Trained tokenizer with a tail of random merges: mostly reachable tokens
/// plus some shadowed and orphaned ones.
pub fn random_mixed_tokenizer(rng: &mut ChaCha8Rng, max_tokens: usize) -> TokenizerModel {
    let trained = random_trained_tokenizer(rng, max_tokens * 3 / 4);
    let target = rng.gen_range(trained.len() + 10..=max_tokens.max(trained.len() + 10));
    extend_randomly(rng, &trained, target)
}

fn extend_randomly(rng: &mut ChaCha8Rng, start: &TokenizerModel, target: usize) -> TokenizerModel {
    let mut tokens: Vec<Vec<u8>> = start.tokens().to_vec();
    let mut index: HashMap<Vec<u8>, TokenId> =
        tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as TokenId)).collect();
    let mut merges: Vec<Merge> = start.merges().to_vec();
    let mut pairs: std::collections::HashSet<(TokenId, TokenId)> =
        merges.iter().map(|m| (m.left, m.right)).collect();
    let seed_bytes: Vec<TokenId> =
        "abcdeostrn .,-'".bytes().chain("é中😀".bytes()).map(|b| b as TokenId).collect();
    let mut pool: Vec<TokenId> = seed_bytes.iter().copied().chain(256..tokens.len() as TokenId).collect();
    let max_tokens = target;
    let mut attempts = 0;
    while tokens.len() < target && attempts < 20 * max_tokens {
        attempts += 1;
        if rng.gen_bool(0.03) {
            let orphan: Vec<u8> = (0..rng.gen_range(2..5)).map(|_| rng.gen_range(b'p'..=b'z')).collect();
            if let std::collections::hash_map::Entry::Vacant(slot) = index.entry(orphan.clone()) {
                tokens.push(orphan);
                slot.insert(tokens.len() as TokenId - 1);
                pool.push(tokens.len() as TokenId - 1);
            }
            continue;
        }
        let l = *pool.choose(rng).unwrap();
        let r = *pool.choose(rng).unwrap();
        if !pairs.insert((l, r)) {
            continue;
        }
        let joined = [tokens[l as usize].as_slice(), tokens[r as usize].as_slice()].concat();
        if joined.len() > 12 {
            continue;
        }
        let result = match index.get(&joined) {
            Some(&id) if id as usize >= 256 => id,
            Some(_) => continue,
            None => {
                tokens.push(joined.clone());
                let id = tokens.len() as TokenId - 1;
                index.insert(joined, id);
                pool.push(id);
                id
            }
        };
        merges.push(Merge { left: l, right: r, result });
    }
    TokenizerModel::from_parts(tokens, merges, start.pretokenizer()).expect("generated tokenizer is valid")
}

const BYTE_TARGET: usize = 260;

/// Tokenizer trained on random text.
pub fn random_trained_tokenizer(rng: &mut ChaCha8Rng, max_tokens: usize) -> TokenizerModel {
    let docs: Vec<String> = (0..40).map(|_| random_text(rng, 120)).collect();
    let size = rng.gen_range(BYTE_TARGET..=max_tokens);
    train_bpe(&docs, size, PreTokenizerConfig::default()).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, role: MatrixRole) -> EmbeddingMatrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    EmbeddingMatrix::new(rows, cols, data, role).unwrap()
}

/// Independent mean: sum in index order, then divide.
pub fn oracle_mean(m: &EmbeddingMatrix, rows: &[TokenId]) -> Vec<f64> {
    (0..m.cols())
        .map(|c| {
            let mut s = 0f64;
            for &r in rows {
                s += m.data()[r as usize * m.cols() + c] as f64;
            }
            s / rows.len() as f64
        })
        .collect()
}

/// Whitespace words with non-alphanumeric characters trimmed from both ends.
pub fn oracle_unigrams(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for w in text.split(char::is_whitespace) {
        let chars: Vec<char> = w.chars().collect();
        let mut a = 0;
        let mut b = chars.len();
        while a < b && !chars[a].is_alphanumeric() {
            a += 1;
        }
        while b > a && !chars[b - 1].is_alphanumeric() {
            b -= 1;
        }
        if a < b {
            out.push(chars[a..b].iter().collect());
        }
    }
    out
}

fn syllable_word(rng: &mut ChaCha8Rng, syllables: &[&str], min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    (0..n).map(|_| *syllables.choose(rng).unwrap()).collect()
}

pub const GENERAL_SYLLABLES: &[&str] =
    &["the", "an", "to", "in", "of", "on", "at", "be", "we", "it", "and", "for", "is", "was"];
pub const DOMAIN_SYLLABLES: &[&str] = &[
    "osteo", "poro", "sis", "nephr", "itis", "cardi", "myo", "path", "ology", "hepat", "oma",
    "gastr", "ectomy", "neur", "algia", "derm", "plasty", "thromb", "cyte",
];

pub struct DomainFixture {
    pub general_words: Vec<String>,
    pub domain_words: Vec<String>,
    pub general_docs: Vec<String>,
    pub domain_corpus: Corpus,
}

/// General-language documents and a paired domain corpus in which roughly
/// `planted` of the source words come from a separate domain lexicon.
pub fn domain_fixture(seed: u64, docs: usize, planted: f64) -> DomainFixture {
    let mut rng = rng(seed);
    let mut general_words: Vec<String> =
        (0..150).map(|_| syllable_word(&mut rng, GENERAL_SYLLABLES, 1, 3)).collect();
    general_words.sort();
    general_words.dedup();
    let mut domain_words: Vec<String> =
        (0..60).map(|_| syllable_word(&mut rng, DOMAIN_SYLLABLES, 2, 4)).collect();
    domain_words.sort();
    domain_words.dedup();

    let sentence = |rng: &mut ChaCha8Rng, n: usize, p: f64| -> String {
        let words: Vec<&str> = (0..n)
            .map(|_| {
                if rng.gen_bool(p) {
                    domain_words.choose(rng).unwrap().as_str()
                } else {
                    general_words.choose(rng).unwrap().as_str()
                }
            })
            .collect();
        words.join(" ") + "."
    };
    let general_docs: Vec<String> = (0..200).map(|_| sentence(&mut rng, 40, 0.0)).collect();
    let records = (0..docs)
        .map(|i| {
            let n = rng.gen_range(20..60);
            let p = (planted + rng.gen_range(-0.1..0.1)).clamp(0.0, 1.0);
            let sd = sentence(&mut rng, n, p);
            let q = (p * rng.gen_range(0.5..1.5)).min(1.0);
            Record { id: i.to_string(), sd, rs: sentence(&mut rng, n / 4 + 2, q) }
        })
        .collect();
    DomainFixture {
        general_words,
        domain_words,
        general_docs,
        domain_corpus: Corpus::from_records(records).unwrap(),
    }
}

pub struct Adapted {
    pub base: TokenizerModel,
    pub report: vocab_surgeon::CandidateReport,
    pub domain: vocab_surgeon::DomainVocabulary,
    pub plan: vocab_surgeon::SurgeryPlan,
    pub model: TokenizerModel,
    pub embeddings: EmbeddingMatrix,
}

/// Base tokenizer trained on general text, domain tokenizer trained on the
/// fixture's domain sources, candidates from a matrix with planted low norms.
pub fn adapt_domain_fixture(fx: &DomainFixture, seed: u64, budget: usize, refine: bool) -> Adapted {
    let mut r = rng(seed);
    let cfg = PreTokenizerConfig::default();
    let base = train_bpe(&fx.general_docs, 420, cfg).unwrap();
    let domain_tok = train_bpe(fx.domain_corpus.sources(), 900, cfg).unwrap();
    let mut embeddings = random_matrix(&mut r, base.len(), 8, MatrixRole::Embedding);
    for id in 256..base.len() {
        if r.gen_bool(0.05) {
            for v in embeddings.row_mut(id) {
                *v *= 1e-3;
            }
        }
    }
    let report = vocab_surgeon::candidate_set(&base, &embeddings, &Default::default()).unwrap();
    let domain =
        vocab_surgeon::build_domain_vocab(&domain_tok, &base, fx.domain_corpus.sources(), budget, refine)
            .unwrap();
    let plan = vocab_surgeon::plan_surgery(&base, &report, &domain).unwrap();
    let model = vocab_surgeon::apply_surgery(&base, &plan).unwrap();
    Adapted { base, report, domain, plan, model, embeddings }
}

pub fn mean_fragment(model: &TokenizerModel, corpus: &Corpus) -> f64 {
    let (mut toks, mut words) = (0usize, 0usize);
    for sd in corpus.sources() {
        for u in oracle_unigrams(sd) {
            toks += model.encode_words(&u).len();
            words += 1;
        }
    }
    toks as f64 / words as f64
}

/// Mixed tokenizer, random embeddings with planted low-norm rows, a random
/// threshold and a random user exclusion list.
pub fn candidate_fixture(
    seed: u64,
) -> (TokenizerModel, vocab_surgeon::CandidateReport, vocab_surgeon::CandidateConfig) {
    use vocab_surgeon::{candidates::TokenSet, CandidateConfig, Threshold};
    let mut r = rng(seed);
    let model = random_mixed_tokenizer(&mut r, 400);
    let mut e = random_matrix(&mut r, model.len(), 6, MatrixRole::Embedding);
    for id in 256..model.len() {
        if r.gen_bool(0.1) {
            for v in e.row_mut(id) {
                *v *= 0.01;
            }
        }
    }
    let threshold = if r.gen_bool(0.5) {
        Threshold::Percentile(r.gen_range(0.5..20.0))
    } else {
        Threshold::Absolute(r.gen_range(0.05..1.0))
    };
    let user_excluded: TokenSet = (256..model.len() as TokenId).filter(|_| r.gen_bool(0.03)).collect();
    let cfg = CandidateConfig { threshold, user_excluded };
    let report = vocab_surgeon::candidate_set(&model, &e, &cfg).unwrap();
    (model, report, cfg)
}

/// Descendants by breadth-first search over the raw merge list.
pub fn oracle_descendants(model: &TokenizerModel, id: TokenId) -> std::collections::BTreeSet<TokenId> {
    let mut seen = std::collections::BTreeSet::new();
    let mut queue = std::collections::VecDeque::from([id]);
    while let Some(t) = queue.pop_front() {
        for m in model.merges() {
            if (m.left == t || m.right == t) && seen.insert(m.result) {
                queue.push_back(m.result);
            }
        }
    }
    seen
}
