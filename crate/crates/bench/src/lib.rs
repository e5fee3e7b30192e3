//! Synthetic inputs shared by the benchmarks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vocab_surgeon::corpus::{Corpus, Record};
use vocab_surgeon::{train_bpe, EmbeddingMatrix, MatrixRole, PreTokenizerConfig, TokenizerModel};

const GENERAL: &[&str] = &["the", "an", "to", "in", "of", "on", "at", "be", "we", "it", "and", "for", "is", "was"];
const DOMAIN: &[&str] = &[
    "osteo", "poro", "sis", "nephr", "itis", "cardi", "myo", "path", "ology", "hepat", "oma", "gastr", "ectomy",
];

fn sentence(rng: &mut ChaCha8Rng, words: usize, domain: f64) -> String {
    let mut out = Vec::with_capacity(words);
    for _ in 0..words {
        let (pool, max) = if rng.gen_bool(domain) { (DOMAIN, 4) } else { (GENERAL, 3) };
        let w: String = (0..rng.gen_range(1..=max)).map(|_| *pool.choose(rng).unwrap()).collect();
        out.push(w);
    }
    out.join(" ") + "."
}

/// `docs` documents of `words` words; `domain` is the share of domain words.
pub fn documents(seed: u64, docs: usize, words: usize, domain: f64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..docs).map(|_| sentence(&mut rng, words, domain)).collect()
}

pub fn corpus(seed: u64, docs: usize, domain: f64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..docs)
        .map(|i| Record { id: i.to_string(), sd: sentence(&mut rng, 200, domain), rs: sentence(&mut rng, 40, domain) })
        .collect();
    Corpus::from_records(records).expect("ids are unique")
}

pub fn tokenizer(seed: u64, vocab_size: usize) -> TokenizerModel {
    train_bpe(documents(seed, 400, 100, 0.0), vocab_size, PreTokenizerConfig::default()).expect("training succeeds")
}

/// Uniform entries with every 40th row shrunk to a tiny norm.
pub fn matrix(seed: u64, rows: usize, cols: usize, role: MatrixRole) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data: Vec<f32> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for row in data.chunks_mut(cols).skip(256).step_by(40) {
        row.iter_mut().for_each(|v| *v *= 1e-3);
    }
    EmbeddingMatrix::new(rows, cols, data, role).expect("finite values")
}
