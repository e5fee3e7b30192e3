//! Tokenizer vocabulary adaptation toolkit.
//!
//! The pipeline recycles vocabulary slots held by tokens a model can never
//! emit (unreachable) or barely saw in pretraining (undertrained), fills them
//! with frequent domain terms, appends whatever does not fit, and initializes
//! the affected embedding rows from the mean of their original subword rows.
//!
//! Modules, in pipeline order:
//!
//! - [`tokenizer`]: byte-level BPE model, training, JSON interchange format.
//! - [`embedding`]: dense embedding matrices and their binary file format.
//! - [`candidates`]: unreachable/undertrained detection and the merge-graph filter.
//! - [`domain_vocab`]: ranked, filtered domain vocabulary.
//! - [`surgery`]: replacement-then-expansion planning and application.
//! - [`embed_init`]: subword-mean initialization of new rows.
//! - [`metrics`]: fragment score, OOV concentration, novel unigram concentration.
//! - [`split`]: OOV-decile and random evaluation splits.

pub mod candidates;
pub mod corpus;
pub mod domain_vocab;
pub mod embed_init;
pub mod embedding;
pub mod error;
pub mod metrics;
pub mod provenance;
pub mod split;
pub mod surgery;
pub mod tokenizer;

pub use candidates::{
    build_merge_dag, candidate_set, filter_by_descendants, find_undertrained, find_unreachable,
    CandidateConfig, CandidateReport, MergeDag, NormProfile, Threshold,
};
pub use domain_vocab::{build_domain_vocab, is_alphabetic, DomainEntry, DomainVocabulary};
pub use embed_init::{init_new_rows, InitReport};
pub use embedding::{EmbeddingMatrix, MatrixRole};
pub use error::{Error, ErrorKind, Result};
pub use metrics::{
    corpus_report, fragment_score, novel_unigram_concentration, oov_concentration, CorpusReport,
    DocumentStats,
};
pub use split::{split_oov, split_random, Side, SplitManifest};
pub use surgery::{
    apply_surgery, materialize_merge_chain, parameter_delta, plan_surgery, SurgeryPlan,
    SurgeryReport,
};
pub use tokenizer::{
    token_frequencies, train_bpe, Merge, MergeRule, PreTokenizerConfig, TokenId, TokenizerModel,
};
