//! Cross-model topic alignment.
//!
//! A topic is embedded as the mean of its top keywords' vectors. Topics from
//! different models are compared by cosine similarity and partitioned
//! greedily: first triplets (one topic from each of three models, every
//! pair at or above `tau`) in descending average similarity, then pairs
//! ("semi" matches) in descending similarity, and whatever remains is
//! unique. Ties are broken by the lexicographic order of the member keys.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::interchange::{EmbeddingTable, Topic, TopicSet};
use crate::{Error, Result};

pub const DEFAULT_TAU: f64 = 0.82;
pub const DEFAULT_TOP_K_KEYWORDS: usize = 30;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingKeywordPolicy {
    #[default]
    Error,
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentConfig {
    pub top_k_keywords: usize,
    pub tau: f64,
    pub missing_keyword_policy: MissingKeywordPolicy,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            top_k_keywords: DEFAULT_TOP_K_KEYWORDS,
            tau: DEFAULT_TAU,
            missing_keyword_policy: MissingKeywordPolicy::Error,
        }
    }
}

impl AlignmentConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if self.top_k_keywords == 0 {
            return Err(Error::Config("top_k_keywords must be at least 1".into()));
        }
        Ok(())
    }
}

/// Identifies one topic of one model. Orders by `(model_id, topic_index)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TopicKey {
    pub model_id: String,
    pub topic_index: u32,
}

impl TopicKey {
    pub fn new(model_id: impl Into<String>, topic_index: u32) -> Self {
        TopicKey {
            model_id: model_id.into(),
            topic_index,
        }
    }
}

impl fmt::Display for TopicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.model_id, self.topic_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicVector {
    pub key: TopicKey,
    pub vector: Vec<f64>,
    pub keywords_used: usize,
}

/// Mean embedding of the topic's top `top_k_keywords` keywords.
pub fn topic_vector(
    model_id: &str,
    topic: &Topic,
    embeddings: &EmbeddingTable,
    config: &AlignmentConfig,
) -> Result<TopicVector> {
    config.check()?;
    let mut sum = vec![0.0; embeddings.dim];
    let mut used = 0usize;
    let mut missing = Vec::new();
    for token in topic.top_tokens(config.top_k_keywords) {
        match embeddings.get(token) {
            Some(v) => {
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += x;
                }
                used += 1;
            }
            None => match config.missing_keyword_policy {
                MissingKeywordPolicy::Error => {
                    return Err(Error::MissingEmbedding {
                        topic: format!("{model_id}:{}", topic.topic_index),
                        token: token.to_owned(),
                    })
                }
                MissingKeywordPolicy::Skip => missing.push(token),
            },
        }
    }
    if used == 0 {
        return Err(Error::MissingEmbedding {
            topic: format!("{model_id}:{}", topic.topic_index),
            token: missing.join(", "),
        });
    }
    if !missing.is_empty() {
        log::warn!(
            "topic {model_id}:{}: {} keywords without embeddings skipped ({})",
            topic.topic_index,
            missing.len(),
            missing.join(", ")
        );
    }
    sum.iter_mut().for_each(|s| *s /= used as f64);
    Ok(TopicVector {
        key: TopicKey::new(model_id, topic.topic_index),
        vector: sum,
        keywords_used: used,
    })
}

/// Topic vectors for every topic of every set, in input order.
pub fn topic_vectors(
    sets: &[TopicSet],
    embeddings: &EmbeddingTable,
    config: &AlignmentConfig,
) -> Result<Vec<TopicVector>> {
    sets.iter()
        .flat_map(|s| s.topics.iter().map(move |t| (s.model_id.as_str(), t)))
        .map(|(m, t)| topic_vector(m, t, embeddings, config))
        .collect()
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Symmetric all-pairs cosine matrix (same-model pairs included).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub keys: Vec<TopicKey>,
    /// Row-major `keys.len()²` values.
    pub values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.keys.len() + j]
    }

    pub fn index_of(&self, key: &TopicKey) -> Option<usize> {
        self.keys.iter().position(|k| k == key)
    }

    pub fn between(&self, a: &TopicKey, b: &TopicKey) -> Option<f64> {
        Some(self.get(self.index_of(a)?, self.index_of(b)?))
    }

    /// Write as a square CSV with a `topic` header column.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let mut header = vec!["topic".to_owned()];
        header.extend(self.keys.iter().map(TopicKey::to_string));
        w.write_record(&header)?;
        let n = self.keys.len();
        for (i, k) in self.keys.iter().enumerate() {
            let mut rec = vec![k.to_string()];
            rec.extend(self.values[i * n..(i + 1) * n].iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn similarity_matrix(vectors: &[TopicVector]) -> Result<SimilarityMatrix> {
    let n = vectors.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| cosine(&vectors[i].vector, &vectors[j].vector))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(SimilarityMatrix {
        keys: vectors.iter().map(|v| v.key.clone()).collect(),
        values: rows.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchCategory {
    Triplet,
    Semi,
    Unique,
}

impl MatchCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchCategory::Triplet => "triplet",
            MatchCategory::Semi => "semi",
            MatchCategory::Unique => "unique",
        }
    }
}

impl std::str::FromStr for MatchCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "triplet" => Ok(MatchCategory::Triplet),
            "semi" => Ok(MatchCategory::Semi),
            "unique" => Ok(MatchCategory::Unique),
            other => Err(Error::Config(format!("unknown match category {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub category: MatchCategory,
    /// Sorted by key.
    pub members: Vec<TopicKey>,
    /// Mean pairwise cosine; `None` for unique topics.
    pub avg_similarity: Option<f64>,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub groups: Vec<Group>,
    pub similarity: Option<SimilarityMatrix>,
}

impl AlignmentReport {
    pub fn count(&self, category: MatchCategory) -> usize {
        self.groups.iter().filter(|g| g.category == category).count()
    }

    /// Topic indices of `model_id` that sit in triplet groups.
    pub fn triplet_topics(&self, model_id: &str) -> Vec<u32> {
        self.groups
            .iter()
            .filter(|g| g.category == MatchCategory::Triplet)
            .flat_map(|g| &g.members)
            .filter(|k| k.model_id == model_id)
            .map(|k| k.topic_index)
            .collect()
    }

    /// `group_id, category, model_id, topic_index, avg_similarity, label`,
    /// one line per member.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record(["group_id", "category", "model_id", "topic_index", "avg_similarity", "label"])?;
        for (gid, g) in self.groups.iter().enumerate() {
            for m in &g.members {
                w.write_record([
                    gid.to_string(),
                    g.category.as_str().to_owned(),
                    m.model_id.clone(),
                    m.topic_index.to_string(),
                    g.avg_similarity.map(|s| s.to_string()).unwrap_or_default(),
                    g.label.clone().unwrap_or_default(),
                ])?;
            }
        }
        w.into_inner()
            .map_err(|e| Error::io(path, e.into_error()))?
            .flush()
            .map_err(|e| Error::io(path, e))
    }

    /// Read a report written by [`AlignmentReport::write_csv`] (without the
    /// similarity matrix).
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let name = path.display().to_string();
        let mut groups: BTreeMap<usize, Group> = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() != 6 {
                return Err(Error::parse(&name, line, "expected 6 fields"));
            }
            let gid: usize = rec[0].parse().map_err(|_| Error::parse(&name, line, "bad group_id"))?;
            let category: MatchCategory = rec[1].parse()?;
            let key = TopicKey::new(
                &rec[2],
                rec[3].parse().map_err(|_| Error::parse(&name, line, "bad topic_index"))?,
            );
            let avg = match &rec[4] {
                "" => None,
                s => Some(s.parse::<f64>().map_err(|_| Error::parse(&name, line, "bad avg_similarity"))?),
            };
            let label = Some(rec[5].to_owned()).filter(|l| !l.is_empty());
            groups
                .entry(gid)
                .or_insert_with(|| Group {
                    category,
                    members: Vec::new(),
                    avg_similarity: avg,
                    label,
                })
                .members
                .push(key);
        }
        Ok(AlignmentReport {
            groups: groups.into_values().collect(),
            similarity: None,
        })
    }
}

fn by_score_then_keys(a: &(f64, Vec<usize>), b: &(f64, Vec<usize>), keys: &[TopicKey]) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| {
        a.1.iter()
            .map(|&i| &keys[i])
            .cmp(b.1.iter().map(|&i| &keys[i]))
    })
}

/// Greedy triplet / semi / unique partition of topics across models.
pub fn group_topics(vectors: &[TopicVector], config: &AlignmentConfig) -> Result<AlignmentReport> {
    config.check()?;
    let models: BTreeSet<&str> = vectors.iter().map(|v| v.key.model_id.as_str()).collect();
    if models.len() < 2 {
        return Err(Error::Config(format!(
            "alignment needs topics from at least 2 models, got {}",
            models.len()
        )));
    }
    let mut seen = BTreeSet::new();
    for v in vectors {
        if !seen.insert(&v.key) {
            return Err(Error::invariant("alignment", format!("duplicate topic {}", v.key)));
        }
    }

    // work in key order so every index list below is already sorted by key
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    order.sort_by(|&a, &b| vectors[a].key.cmp(&vectors[b].key));
    let sorted: Vec<TopicVector> = order.iter().map(|&i| vectors[i].clone()).collect();
    let sim = similarity_matrix(&sorted)?;
    let keys = &sim.keys;
    let tau = config.tau;

    let mut by_model: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        by_model.entry(k.model_id.as_str()).or_default().push(i);
    }
    let model_lists: Vec<&Vec<usize>> = by_model.values().collect();

    let mut consumed = vec![false; keys.len()];
    let mut groups = Vec::new();

    let mut triangles: Vec<(f64, Vec<usize>)> = Vec::new();
    for a in 0..model_lists.len() {
        for b in a + 1..model_lists.len() {
            for c in b + 1..model_lists.len() {
                for &i in model_lists[a] {
                    for &j in model_lists[b] {
                        let sij = sim.get(i, j);
                        if sij < tau {
                            continue;
                        }
                        for &k in model_lists[c] {
                            let (sik, sjk) = (sim.get(i, k), sim.get(j, k));
                            if sik >= tau && sjk >= tau {
                                triangles.push(((sij + sik + sjk) / 3.0, vec![i, j, k]));
                            }
                        }
                    }
                }
            }
        }
    }
    triangles.sort_by(|a, b| by_score_then_keys(a, b, keys));
    for (avg, members) in triangles {
        if members.iter().any(|&m| consumed[m]) {
            continue;
        }
        members.iter().for_each(|&m| consumed[m] = true);
        groups.push(Group {
            category: MatchCategory::Triplet,
            members: members.iter().map(|&m| keys[m].clone()).collect(),
            avg_similarity: Some(avg),
            label: None,
        });
    }

    let mut pairs: Vec<(f64, Vec<usize>)> = Vec::new();
    for i in 0..keys.len() {
        if consumed[i] {
            continue;
        }
        for j in i + 1..keys.len() {
            if consumed[j] || keys[i].model_id == keys[j].model_id {
                continue;
            }
            let s = sim.get(i, j);
            if s >= tau {
                pairs.push((s, vec![i, j]));
            }
        }
    }
    pairs.sort_by(|a, b| by_score_then_keys(a, b, keys));
    for (s, members) in pairs {
        if members.iter().any(|&m| consumed[m]) {
            continue;
        }
        members.iter().for_each(|&m| consumed[m] = true);
        groups.push(Group {
            category: MatchCategory::Semi,
            members: members.iter().map(|&m| keys[m].clone()).collect(),
            avg_similarity: Some(s),
            label: None,
        });
    }

    for (i, k) in keys.iter().enumerate() {
        if !consumed[i] {
            groups.push(Group {
                category: MatchCategory::Unique,
                members: vec![k.clone()],
                avg_similarity: None,
                label: None,
            });
        }
    }

    Ok(AlignmentReport {
        groups,
        similarity: Some(sim),
    })
}

/// Fill group labels from the member topics' labels (first non-empty one).
pub fn attach_labels(report: &mut AlignmentReport, sets: &[TopicSet]) {
    let labels: HashMap<TopicKey, &str> = sets
        .iter()
        .flat_map(|s| {
            s.topics.iter().filter_map(move |t| {
                t.label
                    .as_deref()
                    .map(|l| (TopicKey::new(&s.model_id, t.topic_index), l))
            })
        })
        .collect();
    for g in &mut report.groups {
        if g.label.is_none() {
            g.label = g.members.iter().find_map(|m| labels.get(m)).map(|l| l.to_string());
        }
    }
}

/// Text rendering of a report for terminals.
pub fn render_report(report: &AlignmentReport, mut out: impl Write) -> std::io::Result<()> {
    for cat in [MatchCategory::Triplet, MatchCategory::Semi, MatchCategory::Unique] {
        writeln!(out, "{} matches (n={})", cat.as_str(), report.count(cat))?;
        for g in report.groups.iter().filter(|g| g.category == cat) {
            let members: Vec<String> = g.members.iter().map(TopicKey::to_string).collect();
            match g.avg_similarity {
                Some(s) => writeln!(out, "  {:<40} {s:.3}", members.join(" "))?,
                None => writeln!(out, "  {}", members.join(" "))?,
            }
        }
    }
    Ok(())
}
