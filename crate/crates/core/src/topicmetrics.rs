//! Topic quality metrics: average pairwise NPMI coherence, uniqueness and
//! diversity, evaluated over each model's triplet-matched topics.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::AlignmentReport;
use crate::corpusstats::{npmi, CooccurrenceStats, DEFAULT_EPSILON};
use crate::interchange::{Topic, TopicSet};
use crate::{Error, Result};

pub const DEFAULT_TOP_N: usize = 10;
/// Display name of the coherence column.
pub const COHERENCE_DISPLAY: &str = "C_V";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub top_n_coherence: usize,
    pub epsilon: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            top_n_coherence: DEFAULT_TOP_N,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl MetricsConfig {
    pub fn check(&self) -> Result<()> {
        if self.top_n_coherence < 2 {
            return Err(Error::Config("top_n_coherence must be at least 2".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceScore {
    pub value: f64,
    pub pairs: usize,
    /// Top keywords absent from the corpus statistics.
    pub skipped: Vec<String>,
}

/// Mean NPMI over all unordered pairs of the topic's top keywords.
///
/// Keywords with zero document frequency are skipped (and logged).
pub fn coherence_avg_npmi(
    topic: &Topic,
    stats: &CooccurrenceStats,
    config: &MetricsConfig,
) -> Result<CoherenceScore> {
    config.check()?;
    let (usable, skipped): (Vec<&str>, Vec<&str>) = topic
        .top_tokens(config.top_n_coherence)
        .partition(|t| stats.df(t) > 0);
    if !skipped.is_empty() {
        log::warn!(
            "topic {}: {} keywords absent from corpus ({})",
            topic.topic_index,
            skipped.len(),
            skipped.join(", ")
        );
    }
    if usable.len() < 2 {
        return Err(Error::DegenerateTopic(topic.topic_index.to_string()));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..usable.len() {
        for j in i + 1..usable.len() {
            sum += npmi(stats, usable[i], usable[j], config.epsilon)?;
            pairs += 1;
        }
    }
    Ok(CoherenceScore {
        value: sum / pairs as f64,
        pairs,
        skipped: skipped.into_iter().map(str::to_owned).collect(),
    })
}

/// Alias under the display name used in reports.
pub fn coherence_cv(topic: &Topic, stats: &CooccurrenceStats, config: &MetricsConfig) -> Result<CoherenceScore> {
    coherence_avg_npmi(topic, stats, config)
}

fn top_words<'a>(topics: &[&'a Topic], top_n: usize) -> Result<Vec<Vec<&'a str>>> {
    if topics.is_empty() {
        return Err(Error::NothingToEvaluate("no matched topics".into()));
    }
    if top_n == 0 {
        return Err(Error::Config("top_n must be positive".into()));
    }
    Ok(topics
        .iter()
        .map(|t| {
            if t.keywords.len() < top_n {
                log::warn!(
                    "topic {} has {} keywords, fewer than top_n = {top_n}; using all",
                    t.topic_index,
                    t.keywords.len()
                );
            }
            t.top_tokens(top_n).collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessScore {
    pub per_topic: Vec<f64>,
    pub model_avg: f64,
}

/// Average inverse frequency of each top word within the multiset of all
/// matched topics' top words.
pub fn uniqueness(matched: &[&Topic], top_n: usize) -> Result<UniquenessScore> {
    let words = top_words(matched, top_n)?;
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for w in words.iter().flatten() {
        *counts.entry(w).or_default() += 1;
    }
    let per_topic: Vec<f64> = words
        .iter()
        .map(|ws| ws.iter().map(|w| 1.0 / counts[w] as f64).sum::<f64>() / ws.len() as f64)
        .collect();
    let model_avg = per_topic.iter().sum::<f64>() / per_topic.len() as f64;
    Ok(UniquenessScore { per_topic, model_avg })
}

/// Distinct top words over total top words across matched topics.
pub fn diversity(matched: &[&Topic], top_n: usize) -> Result<f64> {
    let words = top_words(matched, top_n)?;
    let total: usize = words.iter().map(Vec::len).sum();
    let distinct: HashSet<&str> = words.iter().flatten().copied().collect();
    Ok(distinct.len() as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRow {
    pub model_id: String,
    pub avg_coherence: f64,
    pub avg_uniqueness: f64,
    pub avg_diversity: f64,
    pub topics_evaluated: usize,
}

/// One row per model, computed over that model's triplet-matched topics.
///
/// Models with no triplet topics are omitted. Topics whose coherence is
/// degenerate (fewer than two keywords in the corpus) are left out of the
/// coherence average only.
pub fn quality_report(
    topic_sets: &[TopicSet],
    alignment: &AlignmentReport,
    stats: &CooccurrenceStats,
    config: &MetricsConfig,
) -> Result<Vec<QualityRow>> {
    config.check()?;
    if alignment.count(crate::alignment::MatchCategory::Triplet) == 0 {
        return Err(Error::NothingToEvaluate("alignment has no triplet matches".into()));
    }
    let rows: Vec<Option<QualityRow>> = topic_sets
        .par_iter()
        .map(|set| {
            let indices = alignment.triplet_topics(&set.model_id);
            if indices.is_empty() {
                log::warn!("model {} has no triplet-matched topics", set.model_id);
                return Ok(None);
            }
            let matched = indices
                .iter()
                .map(|&i| {
                    set.topic(i).ok_or_else(|| {
                        Error::invariant(
                            format!("model {}", set.model_id),
                            format!("alignment refers to unknown topic {i}"),
                        )
                    })
                })
                .collect::<Result<Vec<&Topic>>>()?;
            let mut coherences = Vec::new();
            for t in &matched {
                match coherence_avg_npmi(t, stats, config) {
                    Ok(c) => coherences.push(c.value),
                    Err(Error::DegenerateTopic(_)) => {
                        log::warn!("model {} topic {}: degenerate, left out of coherence", set.model_id, t.topic_index)
                    }
                    Err(e) => return Err(e),
                }
            }
            let avg_coherence = if coherences.is_empty() {
                f64::NAN
            } else {
                coherences.iter().sum::<f64>() / coherences.len() as f64
            };
            Ok(Some(QualityRow {
                model_id: set.model_id.clone(),
                avg_coherence,
                avg_uniqueness: uniqueness(&matched, config.top_n_coherence)?.model_avg,
                avg_diversity: diversity(&matched, config.top_n_coherence)?,
                topics_evaluated: matched.len(),
            }))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<QualityRow> = rows.into_iter().flatten().collect();
    if rows.is_empty() {
        return Err(Error::NothingToEvaluate("no model has triplet-matched topics".into()));
    }
    Ok(rows)
}

/// `model_id, avg_coherence_cv, avg_uniqueness, avg_diversity, topics_evaluated`
pub fn write_quality_report(rows: &[QualityRow], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["model_id", "avg_coherence_cv", "avg_uniqueness", "avg_diversity", "topics_evaluated"])?;
    for r in rows {
        w.write_record([
            r.model_id.clone(),
            r.avg_coherence.to_string(),
            r.avg_uniqueness.to_string(),
            r.avg_diversity.to_string(),
            r.topics_evaluated.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
