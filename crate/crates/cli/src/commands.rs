use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use vocab_surgeon::corpus::Corpus;
use vocab_surgeon::domain_vocab::DEFAULT_BUDGET;
use vocab_surgeon::embed_init::norm_bound_violations;
use vocab_surgeon::metrics::DEFAULT_SPLIT_THRESHOLD;
use vocab_surgeon::provenance::{tokenizer_hash, Provenance};
use vocab_surgeon::split::{test_size, DEFAULT_TOP_FRAC};
use vocab_surgeon::surgery::{accounting, expansion_parameters, parameter_savings};
use vocab_surgeon::{
    apply_surgery, build_domain_vocab, build_merge_dag, candidate_set, corpus_report, init_new_rows,
    plan_surgery, split_oov, split_random, train_bpe, CandidateConfig, CandidateReport, DomainVocabulary,
    EmbeddingMatrix, MatrixRole, PreTokenizerConfig, Side, SurgeryPlan, SurgeryReport, TokenizerModel,
};

use crate::config::FileConfig;
use crate::files::{self, WithProvenance};
use crate::{DomainArgs, Fields, Invalid, SplitArg, ThresholdArgs};

const HASH_KEY: &str = "tokenizer.sha256";
const BASE_HASH_KEY: &str = "base_tokenizer.sha256";

fn texts(corpus: &Corpus, fields: Fields) -> Vec<&str> {
    match fields {
        Fields::Sd => corpus.sources().collect(),
        Fields::Rs => corpus.summaries().collect(),
        Fields::Both => corpus.texts().collect(),
    }
}

fn fields_name(fields: Fields) -> &'static str {
    match fields {
        Fields::Sd => "sd",
        Fields::Rs => "rs",
        Fields::Both => "both",
    }
}

pub fn train_domain(
    cfg: &FileConfig,
    corpus_path: &Path,
    fields: Fields,
    vocab_size: Option<usize>,
    lowercase: bool,
    out: &Path,
) -> Result<()> {
    let vocab_size = vocab_size
        .or(cfg.vocab_size)
        .ok_or_else(|| anyhow!("--vocab-size is required (flag or config)"))?;
    let corpus = files::read_corpus(corpus_path)?;
    let pre = PreTokenizerConfig { lowercase: lowercase || cfg.lowercase.unwrap_or(false), ..Default::default() };
    let mut model = train_bpe(texts(&corpus, fields), vocab_size, pre)?;
    if model.len() < vocab_size {
        log::warn!("corpus supports only {} tokens of the requested {vocab_size}", model.len());
    }
    let prov = Provenance::new()
        .input_file("corpus", corpus_path)?
        .set("fields", fields_name(fields))
        .set("vocab_size", vocab_size.to_string());
    model.set_provenance(prov.into_map());
    files::write_tokenizer(out, &model)?;
    println!("vocab size {}", model.len());
    Ok(())
}

fn candidate_config(cfg: &FileConfig, args: &ThresholdArgs) -> Result<CandidateConfig> {
    let threshold = cfg.threshold(args.percentile, args.absolute_threshold)?;
    let exclude = if args.exclude.is_empty() { cfg.exclude.clone().unwrap_or_default() } else { args.exclude.clone() };
    Ok(CandidateConfig { threshold, user_excluded: exclude.into_iter().collect() })
}

fn compute_candidates(
    model: &TokenizerModel,
    embeddings: &EmbeddingMatrix,
    cc: &CandidateConfig,
    prov: Provenance,
) -> Result<CandidateReport> {
    let mut report = candidate_set(model, embeddings, cc)?;
    let dag = build_merge_dag(model)?;
    report.check_invariants(&dag).map_err(Invalid)?;
    report.provenance = prov
        .set(HASH_KEY, tokenizer_hash(model))
        .set("threshold", serde_json::to_string(&cc.threshold)?)
        .into_map();
    Ok(report)
}

pub fn find_candidates(
    cfg: &FileConfig,
    tokenizer: &Path,
    embeddings: &Path,
    threshold: &ThresholdArgs,
    out: &Path,
) -> Result<()> {
    let model = files::read_tokenizer(tokenizer)?;
    let e = files::read_matrix(embeddings, MatrixRole::Embedding)?;
    let cc = candidate_config(cfg, threshold)?;
    let prov = Provenance::new().input_file("tokenizer", tokenizer)?.input_file("embeddings", embeddings)?;
    let report = compute_candidates(&model, &e, &cc, prov)?;
    files::write_bytes(out, &report.to_json()?)?;
    println!(
        "unreachable {}  undertrained {}  union {}  excluded {}  final {}  (cutoff {:.6})",
        report.unreachable.len(),
        report.undertrained.len(),
        report.union.len(),
        report.excluded.len(),
        report.replaceable.len(),
        report.threshold_value
    );
    Ok(())
}

fn domain_vocab_from(cfg: &FileConfig, base: &TokenizerModel, args: &DomainArgs) -> Result<(DomainVocabulary, Provenance)> {
    let (Some(tok_path), Some(corpus_path)) = (&args.domain_tokenizer, &args.corpus) else {
        bail!("a domain vocabulary needs --domain-tokenizer and --corpus");
    };
    let domain = files::read_tokenizer(tok_path)?;
    let corpus = files::read_corpus(corpus_path)?;
    let budget = args.budget.or(cfg.budget).unwrap_or(DEFAULT_BUDGET);
    let refine = cfg.refine(args.no_refine);
    let vocab = build_domain_vocab(&domain, base, texts(&corpus, args.fields), budget, refine)?;
    let prov = Provenance::new()
        .input_file("domain_tokenizer", tok_path)?
        .input_file("corpus", corpus_path)?
        .set(BASE_HASH_KEY, tokenizer_hash(base))
        .set("budget", budget.to_string())
        .set("refine", refine.to_string())
        .set("fields", fields_name(args.fields));
    Ok((vocab, prov))
}

pub fn build_domain_vocab_cmd(cfg: &FileConfig, base_path: &Path, args: &DomainArgs, out: &Path) -> Result<()> {
    let base = files::read_tokenizer(base_path)?;
    let (vocab, prov) = domain_vocab_from(cfg, &base, args)?;
    let prov = prov.input_file("base", base_path)?;
    files::write_with(out, |w| vocab.write_jsonl(w))?;
    files::write_sidecar(out, prov.as_map())?;
    println!("{} domain tokens (budget {})", vocab.len(), vocab.budget);
    Ok(())
}

pub struct AdaptInputs<'a> {
    pub base: &'a Path,
    pub embeddings: &'a Path,
    pub unembeddings: &'a Path,
    pub candidates: Option<&'a Path>,
    pub threshold: &'a ThresholdArgs,
    pub domain_vocab: Option<&'a Path>,
    pub domain: &'a DomainArgs,
}

/// Refuse artifacts computed against another tokenizer.
fn check_hash(what: &Path, provenance: &BTreeMap<String, String>, key: &str, expected: &str) -> Result<()> {
    match provenance.get(key) {
        Some(h) if h == expected => Ok(()),
        Some(h) => bail!(
            "{} was computed for tokenizer {h}, but the base tokenizer hashes to {expected}",
            what.display()
        ),
        None => bail!("{} carries no {key} entry; cannot confirm it matches the base tokenizer", what.display()),
    }
}

#[derive(Serialize)]
struct AdaptSummary<'a> {
    #[serde(flatten)]
    report: &'a SurgeryReport,
    parameter_delta_without_replace: u64,
    parameter_savings: f64,
}

fn write_init_outputs(
    out_dir: &Path,
    base: &TokenizerModel,
    plan: &SurgeryPlan,
    e: &EmbeddingMatrix,
    u: &EmbeddingMatrix,
    prov: &Provenance,
) -> Result<()> {
    let (mut e2, mut u2, init) = init_new_rows(base, plan, e, u)?;
    let mut bad = norm_bound_violations(&init, e, &e2);
    bad.extend(norm_bound_violations(&init, u, &u2));
    if !bad.is_empty() {
        return Err(Invalid(format!("rows {bad:?} exceed the norm of every constituent")).into());
    }
    e2.provenance = prov.clone().set("role", "embedding").into_map();
    u2.provenance = prov.clone().set("role", "unembedding").into_map();
    files::write_matrix(&out_dir.join("embeddings.bin"), &e2)?;
    files::write_matrix(&out_dir.join("unembeddings.bin"), &u2)?;
    files::write_json(&out_dir.join("init_report.json"), prov.as_map(), &init)?;
    println!("initialized {} replaced and {} appended rows", init.replaced_rows, init.appended_rows);
    Ok(())
}

fn read_pair(embeddings: &Path, unembeddings: &Path) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    Ok((
        files::read_matrix(embeddings, MatrixRole::Embedding)?,
        files::read_matrix(unembeddings, MatrixRole::Unembedding)?,
    ))
}

pub fn adapt(cfg: &FileConfig, inp: &AdaptInputs, out_dir: &Path) -> Result<()> {
    let base = files::read_tokenizer(inp.base)?;
    let base_hash = tokenizer_hash(&base);
    let (e, u) = read_pair(inp.embeddings, inp.unembeddings)?;
    let mut prov = Provenance::new()
        .input_file("base", inp.base)?
        .input_file("embeddings", inp.embeddings)?
        .input_file("unembeddings", inp.unembeddings)?
        .set(BASE_HASH_KEY, base_hash.clone());

    let candidates = match inp.candidates {
        Some(path) => {
            let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            let report = CandidateReport::from_json(&bytes)?;
            check_hash(path, &report.provenance, HASH_KEY, &base_hash)?;
            prov = prov.input_bytes("candidates", &bytes);
            report
        }
        None => {
            let cc = candidate_config(cfg, inp.threshold)?;
            let report = compute_candidates(&base, &e, &cc, Provenance::new())?;
            files::write_bytes(&out_dir.join("candidates.json"), &report.to_json()?)?;
            report
        }
    };

    let domain = match inp.domain_vocab {
        Some(path) => {
            if let Some(side) = files::read_sidecar(path)? {
                check_hash(path, &side, BASE_HASH_KEY, &base_hash)?;
            }
            prov = prov.input_file("domain_vocab", path)?;
            DomainVocabulary::read_jsonl(files::open(path, "domain vocabulary")?)?
        }
        None => {
            let (vocab, dprov) = domain_vocab_from(cfg, &base, inp.domain)?;
            let path = out_dir.join("domain_vocab.jsonl");
            files::write_with(&path, |w| vocab.write_jsonl(w))?;
            files::write_sidecar(&path, dprov.as_map())?;
            prov = prov.input_file("domain_vocab", &path)?;
            vocab
        }
    };

    let plan = plan_surgery(&base, &candidates, &domain)?;
    let mut model = apply_surgery(&base, &plan)?;
    model.set_provenance(prov.clone().set("artifact", "tokenizer").into_map());
    let plan_prov = prov.clone().set("artifact", "plan").into_map();
    files::write_bytes(&out_dir.join("plan.json"), &plan.to_json(&plan_prov)?)?;
    files::write_tokenizer(&out_dir.join("tokenizer.json"), &model)?;

    let d = e.cols();
    let report = plan.report(d);
    let without = expansion_parameters(plan.total_new_tokens(), d);
    let summary = AdaptSummary {
        report: &report,
        parameter_delta_without_replace: without,
        parameter_savings: parameter_savings(report.parameter_delta, without),
    };
    files::write_json(&out_dir.join("surgery_report.json"), prov.as_map(), &summary)?;
    write_init_outputs(out_dir, &base, &plan, &e, &u, &prov)?;

    println!(
        "vocab {} -> {}: {} replaced, {} appended ({} domain, {} intermediate)",
        report.base_vocab_size,
        report.final_vocab_size,
        report.replaced_count,
        report.expanded_count,
        report.domain_tokens,
        report.intermediate_tokens
    );
    println!(
        "parameter delta {} (without replacement {}), {:.2}% saved",
        report.parameter_delta,
        without,
        summary.parameter_savings * 100.0
    );
    if !report.orphaned.is_empty() {
        log::warn!("{} surviving tokens lost their producing merge", report.orphaned.len());
    }
    if !report.context_only.is_empty() {
        log::warn!("{} new tokens are only produced inside longer pieces", report.context_only.len());
    }
    Ok(())
}

pub fn init_embeddings(
    base_path: &Path,
    plan_path: &Path,
    embeddings: &Path,
    unembeddings: &Path,
    out_dir: &Path,
) -> Result<()> {
    let base = files::read_tokenizer(base_path)?;
    let bytes = std::fs::read(plan_path).with_context(|| format!("reading {}", plan_path.display()))?;
    let (plan, plan_prov) = SurgeryPlan::from_json(&bytes)?;
    let base_hash = tokenizer_hash(&base);
    check_hash(plan_path, &plan_prov, BASE_HASH_KEY, &base_hash)?;
    // validates the plan against the base before touching the matrices
    apply_surgery(&base, &plan)?;
    let (e, u) = read_pair(embeddings, unembeddings)?;
    let prov = Provenance::new()
        .input_file("base", base_path)?
        .input_bytes("plan", &bytes)
        .input_file("embeddings", embeddings)?
        .input_file("unembeddings", unembeddings)?
        .set(BASE_HASH_KEY, base_hash);
    write_init_outputs(out_dir, &base, &plan, &e, &u, &prov)
}

pub fn metrics(
    cfg: &FileConfig,
    tokenizer: &Path,
    corpus_path: &Path,
    split_threshold: Option<usize>,
    out: &Path,
    csv: Option<&Path>,
) -> Result<()> {
    let model = files::read_tokenizer(tokenizer)?;
    let corpus = files::read_corpus(corpus_path)?;
    let k = split_threshold.or(cfg.split_threshold).unwrap_or(DEFAULT_SPLIT_THRESHOLD);
    let report = corpus_report(&model, &corpus, k)?;
    let prov = Provenance::new().input_file("tokenizer", tokenizer)?.input_file("corpus", corpus_path)?;
    files::write_json(out, prov.as_map(), &report)?;
    if let Some(path) = csv {
        files::write_bytes(path, report.to_csv().as_bytes())?;
        files::write_sidecar(path, prov.as_map())?;
    }
    let a = &report.aggregate;
    println!("corpus size {}  split threshold {k}", a.corpus_size);
    println!("{:<20} {:>12} {:>12}", "statistic", "mean", "median");
    for (name, s) in [
        ("sd_token_count", &a.sd_token_count),
        ("rs_token_count", &a.rs_token_count),
        ("sd_oov_conc", &a.sd_oov_conc),
        ("rs_oov_conc", &a.rs_oov_conc),
        ("fragment_sd", &a.fragment_sd),
        ("fragment_rs", &a.fragment_rs),
        ("novel_unigram_conc", &a.novel_unigram_conc),
    ] {
        println!("{name:<20} {:>12.4} {:>12.4}", s.mean, s.median);
    }
    Ok(())
}

pub struct SplitOptions {
    pub top_frac: Option<f64>,
    pub seed: Option<u64>,
    pub split_threshold: Option<usize>,
}

pub fn split(
    cfg: &FileConfig,
    corpus_path: &Path,
    tokenizer: Option<&Path>,
    kind: SplitArg,
    opts: SplitOptions,
    out: &Path,
    materialize: Option<&Path>,
) -> Result<()> {
    let corpus = files::read_corpus(corpus_path)?;
    let top_frac = opts.top_frac.or(cfg.top_frac).unwrap_or(DEFAULT_TOP_FRAC);
    let k = opts.split_threshold.or(cfg.split_threshold).unwrap_or(DEFAULT_SPLIT_THRESHOLD);
    let mut prov = Provenance::new().input_file("corpus", corpus_path)?.set("top_frac", top_frac.to_string());
    let manifest = match kind {
        SplitArg::Random => {
            if !(top_frac > 0.0 && top_frac < 1.0) {
                bail!("--top-frac must be in (0, 1), got {top_frac}");
            }
            split_random(&corpus, test_size(corpus.len(), top_frac), opts.seed.or(cfg.seed).unwrap_or(0))?
        }
        SplitArg::OovSd | SplitArg::OovRs => {
            let path = tokenizer.ok_or_else(|| anyhow!("OOV splits need --tokenizer"))?;
            let model = files::read_tokenizer(path)?;
            prov = prov.input_file("tokenizer", path)?.set("split_threshold", k.to_string());
            let side = if matches!(kind, SplitArg::OovSd) { Side::Sd } else { Side::Rs };
            split_oov(&corpus, &model, side, top_frac, k)?
        }
    };
    files::write_bytes(out, &manifest.to_json()?)?;
    files::write_sidecar(out, prov.as_map())?;
    if let Some(dir) = materialize {
        let (test, train) = manifest.materialize(&corpus)?;
        files::write_with(&dir.join("test.jsonl"), |w| Corpus::write_jsonl(test, w))?;
        files::write_with(&dir.join("train.jsonl"), |w| Corpus::write_jsonl(train, w))?;
    }
    match manifest.threshold {
        Some(t) => println!("{}: {} test, {} train, threshold {t:.4}", manifest.split, manifest.test.len(), manifest.train.len()),
        None => println!("{}: {} test, {} train, seed {}", manifest.split, manifest.test.len(), manifest.train.len(), manifest.seed),
    }
    Ok(())
}

#[derive(Serialize)]
struct Accounting {
    with_replace: SurgeryReport,
    without_replace: SurgeryReport,
    parameter_savings: f64,
}

pub fn report(path: Option<&Path>, numbers: Option<((usize, usize), (usize, usize))>, json: bool) -> Result<()> {
    let (with, without) = match (path, numbers) {
        (Some(p), _) => {
            let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            let r: WithProvenance<SurgeryReport> =
                serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", p.display()))?;
            let r = r.inner;
            let without = accounting(r.base_vocab_size, 0, r.total_new_tokens, r.hidden_dim);
            (r, without)
        }
        (None, Some(((base, cand), (total, d)))) => (accounting(base, cand, total, d), accounting(base, 0, total, d)),
        (None, None) => bail!("pass --surgery-report, or --base-vocab, --candidates, --total-new and --hidden-dim"),
    };
    let savings = parameter_savings(with.parameter_delta, without.parameter_delta);
    if json {
        let a = Accounting { with_replace: with, without_replace: without, parameter_savings: savings };
        println!("{}", serde_json::to_string_pretty(&a)?);
        return Ok(());
    }
    println!("{:<14} {:>10} {:>10} {:>10} {:>14} {:>9}", "variant", "vocab", "replaced", "expanded", "param delta", "millions");
    for (name, r) in [("w/ replace", &with), ("w/o replace", &without)] {
        println!(
            "{name:<14} {:>10} {:>10} {:>10} {:>14} {:>8.1}M",
            r.final_vocab_size,
            r.replaced_count,
            r.expanded_count,
            r.parameter_delta,
            r.parameter_delta as f64 / 1e6
        );
    }
    println!("parameters saved by replacement: {:.2}%", savings * 100.0);
    Ok(())
}
