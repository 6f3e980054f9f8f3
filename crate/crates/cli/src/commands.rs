use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use coffee_core::alignment::{
    attach_labels, group_topics, render_report, topic_vectors, AlignmentConfig, AlignmentReport,
    MissingKeywordPolicy,
};
use coffee_core::coffee::{coffee_run, CoffeeConfig, EffectTable};
use coffee_core::corpusstats::{
    build_cooccurrence_with, detect_ngrams, read_corpus_file, read_stopwords, tokenize, write_corpus,
    CooccurrenceMode, CorpusFile, PreprocessConfig,
};
use coffee_core::interchange::{
    format_p_value, load_bundle, read_embeddings, read_topic_sets, validate_bundle, write_effect_table,
    Bundle, BundlePaths, EffectFormat, LoadOptions, Manifest, ValidationReport,
};
use coffee_core::synthgen::{generate_synthetic, SynthSpec};
use coffee_core::topicmetrics::{quality_report, write_quality_report, MetricsConfig, COHERENCE_DISPLAY};

use crate::args::{
    AlignArgs, BundleArgs, EffectsArgs, Format, PreprocessArgs, QualityArgs, SynthArgs, ValidateArgs,
};
use crate::manifest::RunManifest;
use crate::Usage;

/// Finished normally, or found problems in the inputs.
pub enum Outcome {
    Ok,
    Invalid,
}

fn resolve_bundle(args: &BundleArgs) -> Result<(BundlePaths, bool)> {
    if let Some(m) = &args.manifest {
        let manifest = Manifest::load(m)?;
        return Ok((manifest.paths(), manifest.normalized || args.normalized));
    }
    match (&args.topics, &args.theta, &args.covariates) {
        (Some(topics), Some(theta), Some(covariates)) => Ok((
            BundlePaths {
                topics: topics.clone(),
                theta: theta.clone(),
                covariates: covariates.clone(),
                embeddings: None,
            },
            args.normalized,
        )),
        _ => Err(Usage("give --manifest, or all of --topics, --theta and --covariates".into()).into()),
    }
}

fn bundle_inputs(manifest: &mut RunManifest, args: &BundleArgs, paths: &BundlePaths) -> Result<()> {
    if let Some(m) = &args.manifest {
        manifest.input(m)?;
    }
    manifest.input(&paths.topics)?;
    manifest.input(&paths.theta)?;
    manifest.input(&paths.covariates)
}

fn print_findings(report: &ValidationReport) {
    for f in &report.errors {
        eprintln!("error [{}]: {}", f.code, f.message);
    }
    for f in &report.warnings {
        eprintln!("warning [{}]: {}", f.code, f.message);
    }
}

fn load_checked(args: &BundleArgs) -> Result<(Bundle, ValidationReport)> {
    let (paths, normalized) = resolve_bundle(args)?;
    let bundle = load_bundle(&paths, LoadOptions { normalized, renormalize: false })?;
    let report = validate_bundle(&bundle.topics, &bundle.theta, &bundle.covariates);
    Ok((bundle, report))
}

pub fn validate(args: &ValidateArgs, dir: &Path) -> Result<Outcome> {
    let (paths, _) = resolve_bundle(&args.bundle)?;
    let mut manifest = RunManifest::new("validate", args)?;
    bundle_inputs(&mut manifest, &args.bundle, &paths)?;
    let (_, report) = load_checked(&args.bundle)?;
    print_findings(&report);

    let out = dir.join("validation.json");
    std::fs::write(&out, serde_json::to_string_pretty(&report)? + "\n")?;
    manifest.write(dir, &[out])?;
    println!(
        "{} documents, {} matched; {} errors, {} warnings",
        report.doc_count,
        report.matched_doc_count,
        report.errors.len(),
        report.warnings.len()
    );
    Ok(if report.is_usable() { Outcome::Ok } else { Outcome::Invalid })
}

pub fn preprocess(args: &PreprocessArgs, dir: &Path) -> Result<Outcome> {
    let mut manifest = RunManifest::new("preprocess", args)?;
    manifest.input(&args.input)?;
    let mut config = PreprocessConfig {
        min_token_len: args.min_token_len,
        ngram_threshold: args.ngram_threshold,
        ngram_discount: args.ngram_discount,
        ngram_passes: args.ngram_passes,
        ..Default::default()
    };
    for p in &args.stopwords {
        manifest.input(p)?;
        config.stopwords.extend(read_stopwords(p)?);
    }
    for p in &args.domain_stopwords {
        manifest.input(p)?;
        config.domain_stopwords.extend(read_stopwords(p)?);
    }
    let raw = match read_corpus_file(&args.input)? {
        CorpusFile::Raw(docs) => docs,
        CorpusFile::Tokenized(_) => bail!(Usage(format!(
            "{} is already tokenized (doc_id,tokens); preprocess expects doc_id,text",
            args.input.display()
        ))),
    };
    let corpus = detect_ngrams(&tokenize(&raw, &config)?, &config)?;
    let out = dir.join("corpus.csv");
    write_corpus(&corpus, &out)?;
    manifest.write(dir, &[out])?;
    let tokens: usize = corpus.docs.iter().map(|d| d.tokens.len()).sum();
    println!(
        "{} documents, {} tokens, {} distinct",
        corpus.len(),
        tokens,
        corpus.vocabulary().len()
    );
    Ok(Outcome::Ok)
}

fn align_config(tau: f64, top_k: usize, skip_missing: bool) -> AlignmentConfig {
    AlignmentConfig {
        tau,
        top_k_keywords: top_k,
        missing_keyword_policy: if skip_missing {
            MissingKeywordPolicy::Skip
        } else {
            MissingKeywordPolicy::Error
        },
    }
}

pub fn align(args: &AlignArgs, dir: &Path) -> Result<Outcome> {
    let config = align_config(args.tau, args.top_k_embed, args.skip_missing);
    config.check()?;
    let mut manifest = RunManifest::new("align", args)?;
    manifest.input(&args.topics)?;
    manifest.input(&args.embeddings)?;
    let sets = read_topic_sets(&args.topics)?;
    let embeddings = read_embeddings(&args.embeddings)?;
    let vectors = topic_vectors(&sets, &embeddings, &config)?;
    let mut report = group_topics(&vectors, &config)?;
    attach_labels(&mut report, &sets);

    let groups = dir.join("alignment.csv");
    let similarity = dir.join("similarity.csv");
    let text = dir.join("alignment.txt");
    report.write_csv(&groups)?;
    report
        .similarity
        .as_ref()
        .context("alignment produced no similarity matrix")?
        .write_csv(&similarity)?;
    let mut rendered = Vec::new();
    render_report(&report, &mut rendered)?;
    std::fs::write(&text, &rendered)?;
    manifest.write(dir, &[groups, similarity, text])?;
    print!("{}", String::from_utf8_lossy(&rendered));
    Ok(Outcome::Ok)
}

pub fn quality(args: &QualityArgs, dir: &Path) -> Result<Outcome> {
    let mut manifest = RunManifest::new("quality", args)?;
    manifest.input(&args.topics)?;
    manifest.input(&args.corpus)?;
    let sets = read_topic_sets(&args.topics)?;
    let report = match (&args.alignment, &args.embeddings) {
        (Some(path), _) => {
            manifest.input(path)?;
            AlignmentReport::read_csv(path)?
        }
        (None, Some(path)) => {
            manifest.input(path)?;
            let config = align_config(args.tau, args.top_k_embed, false);
            let vectors = topic_vectors(&sets, &read_embeddings(path)?, &config)?;
            group_topics(&vectors, &config)?
        }
        (None, None) => bail!(Usage("give --alignment or --embeddings".into())),
    };
    let corpus = match read_corpus_file(&args.corpus)? {
        CorpusFile::Tokenized(c) => c,
        CorpusFile::Raw(_) => bail!(Usage(format!(
            "{} holds raw text; run `coffee preprocess` first",
            args.corpus.display()
        ))),
    };
    let config = MetricsConfig {
        top_n_coherence: args.top_n_metric,
        epsilon: args.epsilon,
    };
    // only the words the metrics look at need counting
    let vocab: HashSet<String> = sets
        .iter()
        .flat_map(|s| &s.topics)
        .flat_map(|t| t.top_tokens(args.top_n_metric))
        .map(str::to_owned)
        .collect();
    let mode = match args.window {
        Some(w) => CooccurrenceMode::Window(w),
        None => CooccurrenceMode::Document,
    };
    let stats = build_cooccurrence_with(&corpus, &vocab, mode)?;
    let rows = quality_report(&sets, &report, &stats, &config)?;

    let out = dir.join("quality.csv");
    write_quality_report(&rows, &out)?;
    manifest.write(dir, &[out])?;
    println!(
        "{:<20} {:>10} {:>10} {:>10} {:>7}",
        "model", COHERENCE_DISPLAY, "uniqueness", "diversity", "topics"
    );
    for r in &rows {
        println!(
            "{:<20} {:>10.4} {:>10.4} {:>10.4} {:>7}",
            r.model_id, r.avg_coherence, r.avg_uniqueness, r.avg_diversity, r.topics_evaluated
        );
    }
    Ok(Outcome::Ok)
}

fn print_effects(table: &EffectTable) {
    println!(
        "{:>5} {:<24} {:<16} {:>10} {:>10} {:>9} {:>9}",
        "topic", "label", "term", "estimate", "std_err", "t", "p"
    );
    for r in &table.rows {
        let label: String = r.topic_label.as_deref().unwrap_or("").chars().take(24).collect();
        println!(
            "{:>5} {:<24} {:<16} {:>10.4} {:>10.4} {:>9.3} {:>9}",
            r.topic_index,
            label,
            r.term,
            r.estimate,
            r.std_error,
            r.t_value,
            format_p_value(r.p_value)
        );
    }
}

pub fn effects(args: &EffectsArgs, dir: &Path) -> Result<Outcome> {
    let (paths, _) = resolve_bundle(&args.bundle)?;
    let mut manifest = RunManifest::new("effects", args)?;
    bundle_inputs(&mut manifest, &args.bundle, &paths)?;
    let (bundle, report) = load_checked(&args.bundle)?;
    print_findings(&report);
    if !report.is_usable() {
        return Ok(Outcome::Invalid);
    }

    let config = CoffeeConfig {
        n_bootstrap: args.bootstrap,
        seed: args.seed,
        covariate: args.covariate.clone(),
        min_feasible_samples: args.min_feasible,
        renormalize_theta: args.renormalize_theta,
        merge_threshold: args.merge_threshold,
    };
    let table = coffee_run(&bundle.theta, &bundle.covariates, &config)?.with_topic_labels(&bundle.topics);
    let (out, format) = match args.format {
        Format::Csv => (dir.join("effects.csv"), EffectFormat::Csv),
        Format::Json => (dir.join("effects.json"), EffectFormat::Json),
    };
    write_effect_table(&table, &out, format)?;
    manifest.write(dir, &[out])?;
    print_effects(&table);
    Ok(Outcome::Ok)
}

fn parse_pair<'a>(s: &'a str, what: &str, parts: usize) -> Result<Vec<&'a str>> {
    let v: Vec<&str> = s.split(':').collect();
    if v.len() != parts || v.iter().any(|p| p.is_empty()) {
        bail!(Usage(format!("bad {what} {s:?}")));
    }
    Ok(v)
}

pub fn synth(args: &SynthArgs, dir: &Path) -> Result<Outcome> {
    let manifest = RunManifest::new("synth", args)?;
    let mut categories = Vec::new();
    for c in &args.categories {
        let v = parse_pair(c, "category (want label:share)", 2)?;
        let share: f64 = v[1].parse().map_err(|_| Usage(format!("bad share in {c:?}")))?;
        categories.push((v[0].to_owned(), share));
    }
    let mut effects = BTreeMap::new();
    for e in &args.effects {
        let v = parse_pair(e, "effect (want category:topic:shift)", 3)?;
        let topic: usize = v[1].parse().map_err(|_| Usage(format!("bad topic in {e:?}")))?;
        let shift: f64 = v[2].parse().map_err(|_| Usage(format!("bad shift in {e:?}")))?;
        effects.insert((v[0].to_owned(), topic), shift);
    }
    let spec = SynthSpec {
        n_docs: args.n_docs,
        n_topics: args.n_topics,
        categories,
        base_mean: vec![1.0 / args.n_topics.max(1) as f64; args.n_topics],
        effects,
        concentration: args.concentration,
        seed: args.seed,
        covariate: args.covariate.clone(),
    };
    let bundle = generate_synthetic(&spec)?;
    bundle.write(dir)?;
    let outputs: Vec<PathBuf> = ["topics.csv", "theta.csv", "covariates.csv", "truth.csv", "manifest.json"]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    manifest.write(dir, &outputs)?;
    println!("wrote {} documents x {} topics to {}", args.n_docs, args.n_topics, dir.display());
    Ok(Outcome::Ok)
}
