//! Tokenization, collocation merging and co-occurrence statistics.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub stopwords: BTreeSet<String>,
    pub domain_stopwords: BTreeSet<String>,
    pub min_token_len: usize,
    pub ngram_threshold: f64,
    /// Count discount δ subtracted from pair counts before scoring.
    pub ngram_discount: f64,
    /// 0 = no merging, 1 = bigrams, 2 = bigrams then trigrams.
    pub ngram_passes: u8,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            stopwords: BTreeSet::new(),
            domain_stopwords: BTreeSet::new(),
            min_token_len: 2,
            ngram_threshold: 10.0,
            ngram_discount: 5.0,
            ngram_passes: 2,
        }
    }
}

impl PreprocessConfig {
    pub fn check(&self) -> Result<()> {
        if self.min_token_len < 1 {
            return Err(Error::Config("min_token_len must be at least 1".into()));
        }
        if self.ngram_passes > 2 {
            return Err(Error::Config("ngram_passes must be 0, 1 or 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub docs: Vec<Document>,
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::new();
        for d in &docs {
            if !seen.insert(d.doc_id.as_str()) {
                return Err(Error::invariant("corpus", format!("duplicate doc_id {:?}", d.doc_id)));
            }
            for t in &d.tokens {
                if t.is_empty() {
                    return Err(Error::invariant(format!("corpus doc {:?}", d.doc_id), "empty token"));
                }
                if t.chars().any(char::is_uppercase) {
                    return Err(Error::invariant(
                        format!("corpus doc {:?}", d.doc_id),
                        format!("token {t:?} is not lowercase"),
                    ));
                }
            }
        }
        Ok(Corpus { docs })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Every distinct token in the corpus.
    pub fn vocabulary(&self) -> HashSet<String> {
        self.docs.iter().flat_map(|d| d.tokens.iter().cloned()).collect()
    }
}

/// Lowercase, split on every non-letter character, then drop short tokens
/// and stop-words.
pub fn tokenize_text(text: &str, config: &PreprocessConfig) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphabetic())
        .filter(|t| t.chars().count() >= config.min_token_len)
        .filter(|t| !config.stopwords.contains(*t) && !config.domain_stopwords.contains(*t))
        .map(str::to_owned)
        .collect()
}

pub fn tokenize<S: AsRef<str>>(raw_docs: &[(S, S)], config: &PreprocessConfig) -> Result<Corpus> {
    config.check()?;
    Corpus::new(
        raw_docs
            .iter()
            .map(|(id, text)| Document {
                doc_id: id.as_ref().to_owned(),
                tokens: tokenize_text(text.as_ref(), config),
            })
            .collect(),
    )
}

/// Collocation score `(count(a,b) - δ) · V / (count(a) · count(b))`.
pub fn collocation_score(pair: u64, count_a: u64, count_b: u64, vocab_size: usize, discount: f64) -> f64 {
    (pair as f64 - discount) * vocab_size as f64 / (count_a as f64 * count_b as f64)
}

fn merge_pass(corpus: &Corpus, threshold: f64, discount: f64) -> Corpus {
    let mut unigrams: HashMap<&str, u64> = HashMap::new();
    let mut pairs: HashMap<(&str, &str), u64> = HashMap::new();
    for d in &corpus.docs {
        for t in &d.tokens {
            *unigrams.entry(t).or_default() += 1;
        }
        for w in d.tokens.windows(2) {
            *pairs.entry((&w[0], &w[1])).or_default() += 1;
        }
    }
    let vocab = unigrams.len();
    let accept = |a: &str, b: &str| {
        let pair = pairs.get(&(a, b)).copied().unwrap_or(0);
        collocation_score(pair, unigrams[a], unigrams[b], vocab, discount) >= threshold
    };
    let docs = corpus
        .docs
        .iter()
        .map(|d| {
            let mut out = Vec::with_capacity(d.tokens.len());
            let mut i = 0;
            while i < d.tokens.len() {
                if i + 1 < d.tokens.len() && accept(&d.tokens[i], &d.tokens[i + 1]) {
                    out.push(format!("{}_{}", d.tokens[i], d.tokens[i + 1]));
                    i += 2;
                } else {
                    out.push(d.tokens[i].clone());
                    i += 1;
                }
            }
            Document {
                doc_id: d.doc_id.clone(),
                tokens: out,
            }
        })
        .collect();
    Corpus { docs }
}

/// Merge frequent adjacent pairs into `a_b` tokens, once per pass.
pub fn detect_ngrams(corpus: &Corpus, config: &PreprocessConfig) -> Result<Corpus> {
    config.check()?;
    let mut current = corpus.clone();
    for _ in 0..config.ngram_passes {
        current = merge_pass(&current, config.ngram_threshold, config.ngram_discount);
    }
    Ok(current)
}

/// One token per line; blank lines and `#` comments ignored; lowercased.
pub fn read_stopwords(path: &Path) -> Result<BTreeSet<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeSet::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            out.insert(t.to_lowercase());
        }
    }
    Ok(out)
}

/// Contents of a corpus CSV: raw text or already tokenized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CorpusFile {
    Raw(Vec<(String, String)>),
    Tokenized(Corpus),
}

/// Read `doc_id,text` or `doc_id,tokens` (space-separated) CSV.
pub fn read_corpus_file(path: &Path) -> Result<CorpusFile> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers()?.clone();
    let name = path.display().to_string();
    if headers.get(0) != Some("doc_id") || headers.len() != 2 {
        return Err(Error::parse(&name, 1, "expected columns doc_id,text or doc_id,tokens"));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push((rec[0].to_owned(), rec[1].to_owned()));
    }
    match &headers[1] {
        "text" => Ok(CorpusFile::Raw(rows)),
        "tokens" => Ok(CorpusFile::Tokenized(Corpus::new(
            rows.into_iter()
                .map(|(doc_id, toks)| Document {
                    doc_id,
                    tokens: toks.split_whitespace().map(str::to_owned).collect(),
                })
                .collect(),
        )?)),
        other => Err(Error::parse(&name, 1, format!("unknown corpus column {other:?}"))),
    }
}

/// Write a tokenized corpus as `doc_id,tokens`.
pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["doc_id", "tokens"])?;
    for d in &corpus.docs {
        w.write_record([d.doc_id.as_str(), &d.tokens.join(" ")])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Unit over which co-occurrence is counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum CooccurrenceMode {
    /// Each document is one unit.
    #[default]
    Document,
    /// Each length-`w` sliding window is one unit (documents shorter than
    /// the window form a single unit).
    Window(usize),
}

/// Document frequencies and pair co-document frequencies over a vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooccurrenceStats {
    total_docs: u64,
    /// Sorted vocabulary; ids index into it.
    vocab: Vec<String>,
    ids: HashMap<String, u32>,
    doc_freq: Vec<u64>,
    /// Keyed by `(min_id, max_id)`.
    co_doc_freq: HashMap<(u32, u32), u64>,
}

fn pair_key(a: u32, b: u32) -> (u32, u32) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl CooccurrenceStats {
    /// Build from explicit counts, checking the count invariants.
    pub fn from_counts(
        total_docs: u64,
        doc_freq: &HashMap<String, u64>,
        co_doc_freq: &HashMap<(String, String), u64>,
    ) -> Result<Self> {
        if total_docs == 0 {
            return Err(Error::invariant("cooccurrence", "total_docs must be positive"));
        }
        let mut vocab: Vec<String> = doc_freq.keys().cloned().collect();
        vocab.sort();
        let ids: HashMap<String, u32> = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        let df: Vec<u64> = vocab.iter().map(|w| doc_freq[w]).collect();
        if let Some((w, d)) = vocab.iter().zip(&df).find(|(_, &d)| d > total_docs) {
            return Err(Error::invariant("cooccurrence", format!("df({w}) = {d} exceeds D = {total_docs}")));
        }
        let mut co = HashMap::new();
        for ((a, b), &c) in co_doc_freq {
            let (Some(&ia), Some(&ib)) = (ids.get(a), ids.get(b)) else {
                return Err(Error::invariant("cooccurrence", format!("pair ({a}, {b}) outside vocabulary")));
            };
            if c > df[ia as usize].min(df[ib as usize]) {
                return Err(Error::invariant(
                    "cooccurrence",
                    format!("df({a}, {b}) = {c} exceeds min(df({a}), df({b}))"),
                ));
            }
            if a == b {
                continue;
            }
            if let Some(prev) = co.insert(pair_key(ia, ib), c) {
                if prev != c {
                    return Err(Error::invariant("cooccurrence", format!("asymmetric counts for ({a}, {b})")));
                }
            }
        }
        co.retain(|_, c| *c > 0);
        Ok(CooccurrenceStats {
            total_docs,
            vocab,
            ids,
            doc_freq: df,
            co_doc_freq: co,
        })
    }

    pub fn total_docs(&self) -> u64 {
        self.total_docs
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocab
    }

    /// Number of units containing `w` (0 for unknown tokens).
    pub fn df(&self, w: &str) -> u64 {
        self.ids.get(w).map_or(0, |&i| self.doc_freq[i as usize])
    }

    /// Number of units containing both tokens.
    pub fn co_df(&self, a: &str, b: &str) -> u64 {
        match (self.ids.get(a), self.ids.get(b)) {
            (Some(&ia), Some(&ib)) if ia == ib => self.doc_freq[ia as usize],
            (Some(&ia), Some(&ib)) => self.co_doc_freq.get(&pair_key(ia, ib)).copied().unwrap_or(0),
            _ => 0,
        }
    }

    /// Number of stored (nonzero) pairs.
    pub fn n_pairs(&self) -> usize {
        self.co_doc_freq.len()
    }
}

#[derive(Default)]
struct Counts {
    units: u64,
    df: HashMap<u32, u64>,
    co: HashMap<(u32, u32), u64>,
}

impl Counts {
    fn add_unit(&mut self, present: &BTreeSet<u32>) {
        self.units += 1;
        let ids: Vec<u32> = present.iter().copied().collect();
        for (i, &a) in ids.iter().enumerate() {
            *self.df.entry(a).or_default() += 1;
            for &b in &ids[i + 1..] {
                *self.co.entry((a, b)).or_default() += 1;
            }
        }
    }

    fn merge(mut self, other: Counts) -> Counts {
        self.units += other.units;
        for (k, v) in other.df {
            *self.df.entry(k).or_default() += v;
        }
        for (k, v) in other.co {
            *self.co.entry(k).or_default() += v;
        }
        self
    }
}

/// Boolean-presence counts over whole documents.
pub fn build_cooccurrence(corpus: &Corpus, vocab: &HashSet<String>) -> Result<CooccurrenceStats> {
    build_cooccurrence_with(corpus, vocab, CooccurrenceMode::Document)
}

/// Boolean-presence counts per counting unit; only `vocab` tokens count.
///
/// Documents are counted in parallel and the partial maps summed, which is
/// order independent.
pub fn build_cooccurrence_with(
    corpus: &Corpus,
    vocab: &HashSet<String>,
    mode: CooccurrenceMode,
) -> Result<CooccurrenceStats> {
    if vocab.is_empty() {
        return Err(Error::Config("vocabulary is empty".into()));
    }
    if let CooccurrenceMode::Window(0) = mode {
        return Err(Error::Config("window size must be positive".into()));
    }
    let mut words: Vec<String> = vocab.iter().cloned().collect();
    words.sort();
    let ids: HashMap<String, u32> = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();

    let counts = corpus
        .docs
        .par_iter()
        .fold(Counts::default, |mut acc, doc| {
            let mapped: Vec<Option<u32>> = doc.tokens.iter().map(|t| ids.get(t).copied()).collect();
            match mode {
                CooccurrenceMode::Document => {
                    acc.add_unit(&mapped.iter().flatten().copied().collect());
                }
                CooccurrenceMode::Window(w) => {
                    if mapped.len() <= w {
                        acc.add_unit(&mapped.iter().flatten().copied().collect());
                    } else {
                        for win in mapped.windows(w) {
                            acc.add_unit(&win.iter().flatten().copied().collect());
                        }
                    }
                }
            }
            acc
        })
        .reduce(Counts::default, Counts::merge);

    if counts.units == 0 {
        return Err(Error::invariant("cooccurrence", "corpus has no documents"));
    }
    let doc_freq = (0..words.len() as u32).map(|i| counts.df.get(&i).copied().unwrap_or(0)).collect();
    Ok(CooccurrenceStats {
        total_docs: counts.units,
        vocab: words,
        ids,
        doc_freq,
        co_doc_freq: counts.co,
    })
}

/// Normalized pointwise mutual information of two tokens.
///
/// `log((P(a,b) + ε) / (P(a) P(b))) / -log(P(a,b) + ε)`, clamped to
/// `[-1, 1]`; exactly 1 when the denominator vanishes (joint probability
/// of one).
pub fn npmi(stats: &CooccurrenceStats, a: &str, b: &str, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let d = stats.total_docs as f64;
    let df_a = stats.df(a);
    if df_a == 0 {
        return Err(Error::UnknownToken(a.to_owned()));
    }
    let df_b = stats.df(b);
    if df_b == 0 {
        return Err(Error::UnknownToken(b.to_owned()));
    }
    let p_a = df_a as f64 / d;
    let p_b = df_b as f64 / d;
    let p_ab = stats.co_df(a, b) as f64 / d;
    Ok(npmi_from_probabilities(p_a, p_b, p_ab, epsilon))
}

pub(crate) fn npmi_from_probabilities(p_a: f64, p_b: f64, p_ab: f64, epsilon: f64) -> f64 {
    let joint = p_ab + epsilon;
    let denom = -joint.ln();
    // joint + ε can round above 1, flipping the sign of the denominator
    if denom < 1e-12 {
        return 1.0;
    }
    ((joint / (p_a * p_b)).ln() / denom).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(stop: &[&str], domain: &[&str]) -> PreprocessConfig {
        PreprocessConfig {
            stopwords: stop.iter().map(|s| s.to_string()).collect(),
            domain_stopwords: domain.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    fn corpus(docs: &[&[&str]]) -> Corpus {
        Corpus::new(
            docs.iter()
                .enumerate()
                .map(|(i, t)| Document {
                    doc_id: format!("d{i}"),
                    tokens: t.iter().map(|s| s.to_string()).collect(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn tokenize_empty() {
        assert!(tokenize_text("", &cfg(&[], &[])).is_empty());
    }

    #[test]
    fn tokenize_strips_punctuation_and_digits() {
        let toks = tokenize_text("The water-quality study, 2021!", &cfg(&["the"], &[]));
        assert_eq!(toks, vec!["water", "quality", "study"]);
        assert_eq!(tokenize_text("co2 levels", &cfg(&[], &[])), vec!["co", "levels"]);
    }

    #[test]
    fn tokenize_domain_stopwords() {
        let toks = tokenize_text("NSERC funds Canada", &cfg(&[], &["nserc", "canada"]));
        assert_eq!(toks, vec!["funds"]);
    }

    #[test]
    fn tokenize_min_len() {
        let mut c = cfg(&[], &[]);
        assert_eq!(tokenize_text("a bb ccc", &c), vec!["bb", "ccc"]);
        c.min_token_len = 3;
        assert_eq!(tokenize_text("a bb ccc", &c), vec!["ccc"]);
        c.min_token_len = 0;
        assert!(tokenize(&[("d", "x")], &c).is_err());
    }

    #[test]
    fn zero_passes_is_identity() {
        let c = corpus(&[&["machine", "learning"], &["machine", "learning"]]);
        let mut p = PreprocessConfig::default();
        p.ngram_passes = 0;
        assert_eq!(detect_ngrams(&c, &p).unwrap(), c);
    }

    #[test]
    fn rare_pairs_never_merge() {
        // a large vocabulary makes any positive score clear the threshold
        let filler: Vec<String> = (0..2000).map(|i| format!("w{i}")).collect();
        let build = |reps: usize| {
            let mut docs: Vec<Document> = (0..reps)
                .map(|i| Document {
                    doc_id: format!("d{i}"),
                    tokens: vec!["alpha".into(), "beta".into()],
                })
                .collect();
            docs.push(Document {
                doc_id: "filler".into(),
                tokens: filler.clone(),
            });
            Corpus::new(docs).unwrap()
        };
        let p = PreprocessConfig::default();
        let five = detect_ngrams(&build(5), &p).unwrap();
        assert!(five.vocabulary().iter().all(|t| !t.contains('_')));
        let six = detect_ngrams(&build(6), &p).unwrap();
        assert!(six.vocabulary().contains("alpha_beta"));
        assert_eq!(collocation_score(5, 5, 5, 2002, 5.0), 0.0);
    }

    #[test]
    fn hand_counts() {
        let c = corpus(&[&["a", "b"], &["a", "b"], &["a", "c"], &["b", "c"]]);
        let vocab: HashSet<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let s = build_cooccurrence(&c, &vocab).unwrap();
        assert_eq!(s.total_docs(), 4);
        assert_eq!((s.df("a"), s.df("b"), s.df("c")), (3, 3, 2));
        assert_eq!((s.co_df("a", "b"), s.co_df("a", "c"), s.co_df("b", "c")), (2, 1, 1));
        assert_eq!(s.co_df("b", "a"), 2);
    }

    #[test]
    fn single_doc_and_repeats() {
        let c = corpus(&[&["a", "a", "a", "a", "a"]]);
        let vocab: HashSet<String> = ["a", "z"].iter().map(|s| s.to_string()).collect();
        let s = build_cooccurrence(&c, &vocab).unwrap();
        assert_eq!(s.total_docs(), 1);
        assert_eq!(s.df("a"), 1);
        assert_eq!(s.co_df("a", "z"), 0);
        assert_eq!(s.n_pairs(), 0);
    }

    #[test]
    fn out_of_vocab_tokens_ignored() {
        let c = corpus(&[&["a", "x"], &["x"]]);
        let vocab: HashSet<String> = ["a"].iter().map(|s| s.to_string()).collect();
        let s = build_cooccurrence(&c, &vocab).unwrap();
        assert_eq!(s.df("x"), 0);
        assert!(build_cooccurrence(&c, &HashSet::new()).is_err());
    }

    #[test]
    fn window_mode_counts_windows() {
        let c = corpus(&[&["a", "b", "c", "d"], &["a", "d"]]);
        let vocab: HashSet<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let s = build_cooccurrence_with(&c, &vocab, CooccurrenceMode::Window(2)).unwrap();
        // windows: ab, bc, cd, ad
        assert_eq!(s.total_docs(), 4);
        assert_eq!(s.co_df("a", "b"), 1);
        assert_eq!(s.co_df("a", "c"), 0);
        assert_eq!(s.co_df("a", "d"), 1);
        assert_eq!(s.df("d"), 2);
    }

    #[test]
    fn npmi_hand_value() {
        let c = corpus(&[&["a", "b"], &["a", "b"], &["a", "c"], &["b", "c"]]);
        let vocab = c.vocabulary();
        let s = build_cooccurrence(&c, &vocab).unwrap();
        let v = npmi(&s, "a", "b", DEFAULT_EPSILON).unwrap();
        let oracle = (0.5f64 / 0.5625).ln() / -(0.5f64).ln();
        assert!((v - oracle).abs() < 1e-9);
        assert!((v + 0.1699).abs() < 1e-4);
    }

    #[test]
    fn npmi_unknown_token() {
        let c = corpus(&[&["a"]]);
        let s = build_cooccurrence(&c, &c.vocabulary()).unwrap();
        assert!(matches!(npmi(&s, "a", "q", 1e-12), Err(Error::UnknownToken(t)) if t == "q"));
        assert!(npmi(&s, "a", "a", 0.0).is_err());
    }

    #[test]
    fn npmi_joint_probability_one() {
        let c = corpus(&[&["a", "b"], &["a", "b"]]);
        let s = build_cooccurrence(&c, &c.vocabulary()).unwrap();
        assert_eq!(npmi(&s, "a", "b", 1e-12).unwrap(), 1.0);
    }

    #[test]
    fn from_counts_checks_invariants() {
        let mut df = HashMap::new();
        df.insert("a".to_owned(), 2);
        df.insert("b".to_owned(), 1);
        let mut co = HashMap::new();
        co.insert(("a".to_owned(), "b".to_owned()), 2);
        assert!(CooccurrenceStats::from_counts(3, &df, &co).is_err());
        co.insert(("a".to_owned(), "b".to_owned()), 1);
        let s = CooccurrenceStats::from_counts(3, &df, &co).unwrap();
        assert_eq!(s.co_df("b", "a"), 1);
        assert!(CooccurrenceStats::from_counts(1, &df, &co).is_err());
    }
}
