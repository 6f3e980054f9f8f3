//! On-disk interchange formats for topic-model exports.
//!
//! A bundle is a handful of UTF-8 CSV files plus a JSON manifest:
//!
//! | file             | columns                                          |
//! |------------------|--------------------------------------------------|
//! | `topics.csv`     | `model_id, topic_index, rank, token, weight`     |
//! | `theta.csv`      | `doc_id, t<k>...` (one column per topic index)   |
//! | `covariates.csv` | `doc_id, <covariate>...`                         |
//! | `embeddings.csv` | `token, e0..e<dim-1>`                            |
//!
//! `topics.csv` may carry an extra `label` column; it is optional.
//! Numbers are written with Rust's shortest round-trip formatting so a
//! write/read cycle reproduces every `f64` bit for bit.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coffee::{EffectRow, EffectTable};
use crate::{Error, Result};

/// θ rows are checked against this tolerance when flagged as normalized.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;
/// Categories with fewer documents than this draw a validation warning.
pub const SMALL_CATEGORY_DOCS: usize = 30;
/// θ rows with less total mass than this draw a validation warning.
pub const LOW_MASS_ROW: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyword {
    pub token: String,
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topic {
    pub topic_index: u32,
    pub label: Option<String>,
    /// Ranked, best first.
    pub keywords: Vec<Keyword>,
}

impl Topic {
    pub fn new<S: AsRef<str>>(topic_index: u32, tokens: &[S]) -> Self {
        Topic {
            topic_index,
            label: None,
            keywords: tokens
                .iter()
                .map(|t| Keyword {
                    token: t.as_ref().to_owned(),
                    weight: None,
                })
                .collect(),
        }
    }

    /// The first `n` tokens by rank (fewer if the topic is shorter).
    pub fn top_tokens(&self, n: usize) -> impl Iterator<Item = &str> {
        self.keywords.iter().take(n).map(|k| k.token.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSet {
    pub model_id: String,
    pub topics: Vec<Topic>,
}

impl TopicSet {
    /// Build a topic set, enforcing index and keyword uniqueness.
    pub fn new(model_id: impl Into<String>, topics: Vec<Topic>) -> Result<Self> {
        let set = TopicSet {
            model_id: model_id.into(),
            topics,
        };
        set.check()?;
        Ok(set)
    }

    fn check(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for t in &self.topics {
            let ctx = format!("model {} topic {}", self.model_id, t.topic_index);
            if !seen.insert(t.topic_index) {
                return Err(Error::invariant(ctx, "duplicate topic_index"));
            }
            if t.keywords.is_empty() {
                return Err(Error::invariant(ctx, "empty keyword list"));
            }
            let mut tokens = HashSet::new();
            for k in &t.keywords {
                if !tokens.insert(k.token.as_str()) {
                    return Err(Error::invariant(ctx, format!("duplicate token {:?}", k.token)));
                }
            }
        }
        Ok(())
    }

    pub fn topic(&self, index: u32) -> Option<&Topic> {
        self.topics.iter().find(|t| t.topic_index == index)
    }

    pub fn topic_indices(&self) -> Vec<u32> {
        self.topics.iter().map(|t| t.topic_index).collect()
    }
}

/// Document × topic proportions, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaMatrix {
    pub model_id: String,
    pub doc_ids: Vec<String>,
    pub topic_indices: Vec<u32>,
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl ThetaMatrix {
    pub fn new(
        model_id: impl Into<String>,
        doc_ids: Vec<String>,
        topic_indices: Vec<u32>,
        values: Vec<f64>,
        normalized: bool,
    ) -> Result<Self> {
        let theta = ThetaMatrix {
            model_id: model_id.into(),
            doc_ids,
            topic_indices,
            values,
            normalized,
        };
        theta.check()?;
        Ok(theta)
    }

    fn check(&self) -> Result<()> {
        let k = self.n_topics();
        if self.values.len() != self.n_docs() * k {
            return Err(Error::Dimension(format!(
                "theta has {} values for {}x{}",
                self.values.len(),
                self.n_docs(),
                k
            )));
        }
        let mut seen = HashSet::new();
        for d in &self.doc_ids {
            if !seen.insert(d.as_str()) {
                return Err(Error::invariant("theta", format!("duplicate doc_id {d:?}")));
            }
        }
        let mut idx = HashSet::new();
        for t in &self.topic_indices {
            if !idx.insert(*t) {
                return Err(Error::invariant("theta", format!("duplicate topic column t{t}")));
            }
        }
        for (r, doc) in self.doc_ids.iter().enumerate() {
            let row = self.row(r);
            for (c, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::invariant(
                        format!("theta row {doc:?} column t{}", self.topic_indices[c]),
                        "non-finite proportion",
                    ));
                }
                if v < 0.0 {
                    return Err(Error::invariant(
                        format!("theta row {doc:?} column t{}", self.topic_indices[c]),
                        format!("negative proportion {v}"),
                    ));
                }
            }
            if self.normalized {
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
                    return Err(Error::invariant(
                        format!("theta row {doc:?}"),
                        format!("row sums to {s}, expected 1 for a normalized matrix"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn n_topics(&self) -> usize {
        self.topic_indices.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let k = self.n_topics();
        &self.values[r * k..(r + 1) * k]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.n_topics() + c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.n_docs()).map(|r| self.get(r, c)).collect()
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.row(r).iter().sum()
    }

    /// Scale every row with positive mass to sum to one.
    pub fn renormalize(&mut self) {
        let k = self.n_topics();
        for row in self.values.chunks_mut(k.max(1)) {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
        self.normalized = true;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateTable {
    pub doc_ids: Vec<String>,
    /// Covariate name → labels aligned with `doc_ids`.
    pub columns: BTreeMap<String, Vec<String>>,
}

impl CovariateTable {
    pub fn new(doc_ids: Vec<String>, columns: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let table = CovariateTable { doc_ids, columns };
        table.check()?;
        Ok(table)
    }

    fn check(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for d in &self.doc_ids {
            if !seen.insert(d.as_str()) {
                return Err(Error::invariant("covariates", format!("duplicate doc_id {d:?}")));
            }
        }
        for (name, col) in &self.columns {
            if col.len() != self.doc_ids.len() {
                return Err(Error::Dimension(format!(
                    "covariate {name:?} has {} labels for {} documents",
                    col.len(),
                    self.doc_ids.len()
                )));
            }
            if let Some(i) = col.iter().position(|l| l.trim().is_empty()) {
                return Err(Error::invariant(
                    format!("covariate {name:?} doc {:?}", self.doc_ids[i]),
                    "empty category label",
                ));
            }
            if col.is_empty() {
                return Err(Error::invariant(
                    format!("covariate {name:?}"),
                    "no categories",
                ));
            }
        }
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<&[String]> {
        self.columns.get(name).map(Vec::as_slice)
    }

    pub fn category_counts(&self, name: &str) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for l in self.columns.get(name).into_iter().flatten() {
            *counts.entry(l.as_str()).or_default() += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, vectors: HashMap<String, Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invariant("embeddings", "dim must be positive"));
        }
        for (tok, v) in &vectors {
            if v.len() != dim {
                return Err(Error::Dimension(format!(
                    "embedding for {tok:?} has length {}, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("embedding for {tok:?}")));
            }
        }
        Ok(EmbeddingTable { dim, vectors })
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<Finding>,
    pub warnings: Vec<Finding>,
    pub doc_count: usize,
    pub matched_doc_count: usize,
}

impl ValidationReport {
    pub fn is_usable(&self) -> bool {
        self.errors.is_empty()
    }

    fn error(&mut self, code: &str, message: String) {
        self.errors.push(Finding {
            code: code.to_owned(),
            message,
        });
    }

    fn warn(&mut self, code: &str, message: String) {
        self.warnings.push(Finding {
            code: code.to_owned(),
            message,
        });
    }
}

/// Cross-file consistency checks. Never fails; problems are reported.
pub fn validate_bundle(
    topics: &TopicSet,
    theta: &ThetaMatrix,
    covariates: &CovariateTable,
) -> ValidationReport {
    let mut report = ValidationReport {
        doc_count: theta.n_docs(),
        ..Default::default()
    };

    let theta_docs: BTreeSet<&str> = theta.doc_ids.iter().map(String::as_str).collect();
    let cov_docs: BTreeSet<&str> = covariates.doc_ids.iter().map(String::as_str).collect();
    report.matched_doc_count = theta_docs.intersection(&cov_docs).count();
    let only_theta: Vec<&str> = theta_docs.difference(&cov_docs).copied().collect();
    let only_cov: Vec<&str> = cov_docs.difference(&theta_docs).copied().collect();
    if !only_theta.is_empty() || !only_cov.is_empty() {
        report.error(
            "doc_id_mismatch",
            format!(
                "doc_id mismatch: {} only in theta {}, {} only in covariates {}",
                only_theta.len(),
                preview(&only_theta),
                only_cov.len(),
                preview(&only_cov)
            ),
        );
    }

    let topic_idx: BTreeSet<u32> = topics.topic_indices().into_iter().collect();
    let theta_idx: BTreeSet<u32> = theta.topic_indices.iter().copied().collect();
    if topic_idx != theta_idx {
        let a: Vec<String> = topic_idx.difference(&theta_idx).map(u32::to_string).collect();
        let b: Vec<String> = theta_idx.difference(&topic_idx).map(u32::to_string).collect();
        report.error(
            "topic_index_mismatch",
            format!(
                "topic_index mismatch: only in topics [{}], only in theta [{}]",
                a.join(", "),
                b.join(", ")
            ),
        );
    }
    if topics.model_id != theta.model_id {
        report.warn(
            "model_id_mismatch",
            format!(
                "topics model_id {:?} differs from theta model_id {:?}",
                topics.model_id, theta.model_id
            ),
        );
    }

    for name in covariates.columns.keys() {
        for (label, count) in covariates.category_counts(name) {
            if count < SMALL_CATEGORY_DOCS {
                report.warn(
                    "small_category",
                    format!("small category: {name}={label:?} has {count} documents"),
                );
            }
        }
    }

    let low: Vec<&str> = (0..theta.n_docs())
        .filter(|&r| theta.row_sum(r) < LOW_MASS_ROW)
        .map(|r| theta.doc_ids[r].as_str())
        .collect();
    if !low.is_empty() {
        report.warn(
            "low_mass_row",
            format!(
                "{} theta rows sum to less than {LOW_MASS_ROW} {}",
                low.len(),
                preview(&low)
            ),
        );
    }
    report
}

fn preview(ids: &[&str]) -> String {
    const SHOWN: usize = 5;
    let mut s = ids
        .iter()
        .take(SHOWN)
        .map(|d| format!("{d:?}"))
        .collect::<Vec<_>>()
        .join(", ");
    if ids.len() > SHOWN {
        s.push_str(", ...");
    }
    format!("[{s}]")
}

// ---------------------------------------------------------------------------
// Readers

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn create_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn parse_f64(path: &Path, line: u64, field: &str, what: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| Error::parse(path.display().to_string(), line, format!("{what}: not a number: {field:?}")))
}

fn header_index(path: &Path, headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::parse(path.display().to_string(), 1, format!("missing column {name:?}")))
}

/// Read `topics.csv`; one [`TopicSet`] per model_id in order of first appearance.
pub fn read_topic_sets(path: &Path) -> Result<Vec<TopicSet>> {
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers()?.clone();
    let c_model = header_index(path, &headers, "model_id")?;
    let c_topic = header_index(path, &headers, "topic_index")?;
    let c_rank = header_index(path, &headers, "rank")?;
    let c_token = header_index(path, &headers, "token")?;
    let c_weight = header_index(path, &headers, "weight")?;
    let c_label = headers.iter().position(|h| h == "label");
    let file = path.display().to_string();

    // model → topic → (label, [(rank, keyword)])
    let mut order: Vec<String> = Vec::new();
    type Ranked = (Option<String>, Vec<(u64, Keyword)>);
    let mut models: HashMap<String, BTreeMap<u32, Ranked>> = HashMap::new();
    let mut topic_order: HashMap<String, Vec<u32>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let model = rec[c_model].to_owned();
        if model.is_empty() {
            return Err(Error::parse(&file, line, "empty model_id"));
        }
        let topic: u32 = rec[c_topic]
            .parse()
            .map_err(|_| Error::parse(&file, line, format!("bad topic_index {:?}", &rec[c_topic])))?;
        let rank: u64 = rec[c_rank]
            .parse()
            .map_err(|_| Error::parse(&file, line, format!("bad rank {:?}", &rec[c_rank])))?;
        let token = rec[c_token].to_owned();
        if token.is_empty() {
            return Err(Error::parse(&file, line, "empty token"));
        }
        let weight = match &rec[c_weight] {
            "" => None,
            w => Some(parse_f64(path, line, w, "weight")?),
        };
        let label = c_label.map(|c| rec[c].to_owned()).filter(|l| !l.is_empty());
        if !models.contains_key(&model) {
            order.push(model.clone());
        }
        let topics = models.entry(model.clone()).or_default();
        if !topics.contains_key(&topic) {
            topic_order.entry(model.clone()).or_default().push(topic);
        }
        let entry = topics.entry(topic).or_insert_with(|| (None, Vec::new()));
        if entry.0.is_none() {
            entry.0 = label;
        }
        entry.1.push((rank, Keyword { token, weight }));
    }

    order
        .into_iter()
        .map(|model| {
            let mut topics = models.remove(&model).unwrap_or_default();
            let list = topic_order
                .remove(&model)
                .unwrap_or_default()
                .into_iter()
                .map(|idx| {
                    let (label, mut kws) = topics.remove(&idx).unwrap_or_default();
                    kws.sort_by_key(|(r, _)| *r);
                    Topic {
                        topic_index: idx,
                        label,
                        keywords: kws.into_iter().map(|(_, k)| k).collect(),
                    }
                })
                .collect();
            TopicSet::new(model, list)
        })
        .collect()
}

/// Read a topics file expected to hold exactly one model.
pub fn read_topic_set(path: &Path) -> Result<TopicSet> {
    let mut sets = read_topic_sets(path)?;
    match sets.len() {
        1 => Ok(sets.remove(0)),
        0 => Err(Error::parse(path.display().to_string(), 1, "no topics")),
        n => Err(Error::parse(
            path.display().to_string(),
            1,
            format!("expected one model, found {n}"),
        )),
    }
}

pub fn read_theta(path: &Path, model_id: &str, normalized: bool) -> Result<ThetaMatrix> {
    let file = path.display().to_string();
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("doc_id") {
        return Err(Error::parse(&file, 1, "first column must be doc_id"));
    }
    let topic_indices = headers
        .iter()
        .skip(1)
        .map(|h| {
            h.strip_prefix('t')
                .and_then(|k| k.parse::<u32>().ok())
                .ok_or_else(|| Error::parse(&file, 1, format!("topic column {h:?} is not t<k>")))
        })
        .collect::<Result<Vec<_>>>()?;
    let k = topic_indices.len();
    let mut doc_ids = Vec::new();
    let mut values = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() != k + 1 {
            return Err(Error::parse(&file, line, format!("expected {} fields, got {}", k + 1, rec.len())));
        }
        let doc = rec[0].to_owned();
        if !seen.insert(doc.clone()) {
            return Err(Error::parse(&file, line, format!("duplicate doc_id {doc:?}")));
        }
        for (c, field) in rec.iter().skip(1).enumerate() {
            let v = parse_f64(path, line, field, "proportion")?;
            if !v.is_finite() {
                return Err(Error::parse(&file, line, format!("non-finite proportion in t{}", topic_indices[c])));
            }
            if v < 0.0 {
                return Err(Error::parse(&file, line, format!("negative proportion {v} in t{}", topic_indices[c])));
            }
            values.push(v);
        }
        doc_ids.push(doc);
    }
    ThetaMatrix::new(model_id, doc_ids, topic_indices, values, normalized)
}

pub fn read_covariates(path: &Path) -> Result<CovariateTable> {
    let file = path.display().to_string();
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("doc_id") {
        return Err(Error::parse(&file, 1, "first column must be doc_id"));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    let mut columns: Vec<Vec<String>> = vec![Vec::new(); names.len()];
    let mut doc_ids = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() != names.len() + 1 {
            return Err(Error::parse(&file, line, "wrong number of fields"));
        }
        for (i, field) in rec.iter().skip(1).enumerate() {
            if field.is_empty() {
                return Err(Error::parse(&file, line, format!("empty category label in {:?}", names[i])));
            }
            columns[i].push(field.to_owned());
        }
        doc_ids.push(rec[0].to_owned());
    }
    CovariateTable::new(doc_ids, names.into_iter().zip(columns).collect())
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let file = path.display().to_string();
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("token") {
        return Err(Error::parse(&file, 1, "first column must be token"));
    }
    let dim = headers.len() - 1;
    for (i, h) in headers.iter().skip(1).enumerate() {
        if h != format!("e{i}") {
            return Err(Error::parse(&file, 1, format!("expected column e{i}, found {h:?}")));
        }
    }
    let mut vectors = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() != dim + 1 {
            return Err(Error::parse(&file, line, "wrong number of fields"));
        }
        let v = rec
            .iter()
            .skip(1)
            .map(|f| parse_f64(path, line, f, "embedding component"))
            .collect::<Result<Vec<_>>>()?;
        if vectors.insert(rec[0].to_owned(), v).is_some() {
            return Err(Error::parse(&file, line, format!("duplicate token {:?}", &rec[0])));
        }
    }
    EmbeddingTable::new(dim, vectors)
}

// ---------------------------------------------------------------------------
// Writers

pub fn write_topic_sets(sets: &[TopicSet], path: &Path) -> Result<()> {
    let with_label = sets.iter().flat_map(|s| &s.topics).any(|t| t.label.is_some());
    let mut w = create_writer(path)?;
    let mut header = vec!["model_id", "topic_index", "rank", "token", "weight"];
    if with_label {
        header.push("label");
    }
    w.write_record(&header)?;
    for set in sets {
        for t in &set.topics {
            for (rank, k) in t.keywords.iter().enumerate() {
                let mut rec = vec![
                    set.model_id.clone(),
                    t.topic_index.to_string(),
                    (rank + 1).to_string(),
                    k.token.clone(),
                    k.weight.map(|x| x.to_string()).unwrap_or_default(),
                ];
                if with_label {
                    rec.push(t.label.clone().unwrap_or_default());
                }
                w.write_record(&rec)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_theta(theta: &ThetaMatrix, path: &Path) -> Result<()> {
    let mut w = create_writer(path)?;
    let mut header = vec!["doc_id".to_owned()];
    header.extend(theta.topic_indices.iter().map(|k| format!("t{k}")));
    w.write_record(&header)?;
    for (r, doc) in theta.doc_ids.iter().enumerate() {
        let mut rec = vec![doc.clone()];
        rec.extend(theta.row(r).iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_covariates(cov: &CovariateTable, path: &Path) -> Result<()> {
    let mut w = create_writer(path)?;
    let mut header = vec!["doc_id".to_owned()];
    header.extend(cov.columns.keys().cloned());
    w.write_record(&header)?;
    for (r, doc) in cov.doc_ids.iter().enumerate() {
        let mut rec = vec![doc.clone()];
        rec.extend(cov.columns.values().map(|c| c[r].clone()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_embeddings(emb: &EmbeddingTable, path: &Path) -> Result<()> {
    let mut w = create_writer(path)?;
    let mut header = vec!["token".to_owned()];
    header.extend((0..emb.dim).map(|i| format!("e{i}")));
    w.write_record(&header)?;
    let mut tokens: Vec<&String> = emb.vectors.keys().collect();
    tokens.sort();
    for tok in tokens {
        let mut rec = vec![tok.clone()];
        rec.extend(emb.vectors[tok].iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Manifest and bundle

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model_id: String,
    pub topics: PathBuf,
    pub theta: PathBuf,
    pub covariates: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default)]
    pub normalized: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

impl Manifest {
    /// Load a manifest; relative file paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut m.topics);
        resolve(&mut m.theta);
        resolve(&mut m.covariates);
        if let Some(e) = m.embeddings.as_mut() {
            resolve(e);
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn paths(&self) -> BundlePaths {
        BundlePaths {
            topics: self.topics.clone(),
            theta: self.theta.clone(),
            covariates: self.covariates.clone(),
            embeddings: self.embeddings.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundlePaths {
    pub topics: PathBuf,
    pub theta: PathBuf,
    pub covariates: PathBuf,
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Rows are expected to sum to one (checked at load).
    pub normalized: bool,
    /// Scale every θ row with positive mass to sum to one after loading.
    pub renormalize: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub topics: TopicSet,
    pub theta: ThetaMatrix,
    pub covariates: CovariateTable,
    pub embeddings: Option<EmbeddingTable>,
}

pub fn load_bundle(paths: &BundlePaths, options: LoadOptions) -> Result<Bundle> {
    let topics = read_topic_set(&paths.topics)?;
    let mut theta = read_theta(&paths.theta, &topics.model_id, options.normalized)?;
    if options.renormalize {
        theta.renormalize();
    }
    let covariates = read_covariates(&paths.covariates)?;
    let embeddings = paths.embeddings.as_deref().map(read_embeddings).transpose()?;
    Ok(Bundle {
        topics,
        theta,
        covariates,
        embeddings,
    })
}

// ---------------------------------------------------------------------------
// Effect tables

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EffectFormat {
    Csv,
    Json,
}

const EFFECT_COLUMNS: [&str; 11] = [
    "model_id",
    "topic_index",
    "topic_label",
    "term",
    "estimate",
    "std_error",
    "t_value",
    "p_value",
    "p_display",
    "df",
    "samples_used",
];

/// Table display string for a p-value: `<0.0001` below 1e-4, else four decimals.
pub fn format_p_value(p: f64) -> String {
    if p.is_nan() {
        "NA".to_owned()
    } else if p < 1e-4 {
        "<0.0001".to_owned()
    } else {
        format!("{p:.4}")
    }
}

#[derive(Serialize, Deserialize)]
struct JsonEffectTable {
    model_id: String,
    covariate: String,
    rows: Vec<JsonEffectRow>,
}

#[derive(Serialize, Deserialize)]
struct JsonEffectRow {
    topic_index: u32,
    topic_label: Option<String>,
    term: String,
    estimate: Option<f64>,
    std_error: Option<f64>,
    t_value: Option<f64>,
    p_value: Option<f64>,
    p_display: String,
    df: Option<f64>,
    samples_used: usize,
}

fn finite(v: f64) -> Option<f64> {
    (!v.is_nan()).then_some(v)
}

pub fn write_effect_table(table: &EffectTable, path: &Path, format: EffectFormat) -> Result<()> {
    match format {
        EffectFormat::Csv => {
            let mut w = create_writer(path)?;
            w.write_record(EFFECT_COLUMNS)?;
            for r in &table.rows {
                w.write_record([
                    table.model_id.clone(),
                    r.topic_index.to_string(),
                    r.topic_label.clone().unwrap_or_default(),
                    r.term.clone(),
                    r.estimate.to_string(),
                    r.std_error.to_string(),
                    r.t_value.to_string(),
                    r.p_value.to_string(),
                    format_p_value(r.p_value),
                    r.df.to_string(),
                    r.samples_used.to_string(),
                ])?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
        EffectFormat::Json => {
            let json = JsonEffectTable {
                model_id: table.model_id.clone(),
                covariate: table.covariate.clone(),
                rows: table
                    .rows
                    .iter()
                    .map(|r| JsonEffectRow {
                        topic_index: r.topic_index,
                        topic_label: r.topic_label.clone(),
                        term: r.term.clone(),
                        estimate: finite(r.estimate),
                        std_error: finite(r.std_error),
                        t_value: finite(r.t_value),
                        p_value: finite(r.p_value),
                        p_display: format_p_value(r.p_value),
                        df: finite(r.df),
                        samples_used: r.samples_used,
                    })
                    .collect(),
            };
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(file);
            serde_json::to_writer_pretty(&mut w, &json)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            w.flush().map_err(|e| Error::io(path, e))
        }
    }
}

/// Read an effect table written by [`write_effect_table`].
///
/// CSV carries no covariate name, so it comes back empty from that format.
pub fn read_effect_table(path: &Path, format: EffectFormat) -> Result<EffectTable> {
    match format {
        EffectFormat::Json => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let json: JsonEffectTable = serde_json::from_str(&text)?;
            let nan = |v: Option<f64>| v.unwrap_or(f64::NAN);
            Ok(EffectTable {
                model_id: json.model_id,
                covariate: json.covariate,
                rows: json
                    .rows
                    .into_iter()
                    .map(|r| EffectRow {
                        topic_index: r.topic_index,
                        topic_label: r.topic_label,
                        term: r.term,
                        estimate: nan(r.estimate),
                        std_error: nan(r.std_error),
                        t_value: nan(r.t_value),
                        p_value: nan(r.p_value),
                        df: nan(r.df),
                        samples_used: r.samples_used,
                    })
                    .collect(),
            })
        }
        EffectFormat::Csv => {
            let file = path.display().to_string();
            let mut rdr = open_reader(path)?;
            let headers = rdr.headers()?.clone();
            if headers.iter().ne(EFFECT_COLUMNS.iter().copied()) {
                return Err(Error::parse(&file, 1, "unexpected effect table header"));
            }
            let mut model_id = String::new();
            let mut rows = Vec::new();
            for rec in rdr.records() {
                let rec = rec?;
                let line = line_of(&rec);
                model_id = rec[0].to_owned();
                let num = |i: usize| parse_f64(path, line, &rec[i], EFFECT_COLUMNS[i]);
                rows.push(EffectRow {
                    topic_index: rec[1]
                        .parse()
                        .map_err(|_| Error::parse(&file, line, "bad topic_index"))?,
                    topic_label: Some(rec[2].to_owned()).filter(|l| !l.is_empty()),
                    term: rec[3].to_owned(),
                    estimate: num(4)?,
                    std_error: num(5)?,
                    t_value: num(6)?,
                    p_value: num(7)?,
                    df: num(9)?,
                    samples_used: rec[10]
                        .parse()
                        .map_err(|_| Error::parse(&file, line, "bad samples_used"))?,
                });
            }
            Ok(EffectTable {
                model_id,
                covariate: String::new(),
                rows,
            })
        }
    }
}
