//! Synthetic (θ, covariate) bundles with known category effects.
//!
//! Each document is assigned a category by exact quota, then its θ row is a
//! Dirichlet draw (normalized Gamma variates) whose mean is the base mean
//! plus that category's shift. Ground truth is reported in sum-contrast
//! coordinates: category mean minus the unweighted mean of category means.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::interchange::{
    write_covariates, write_theta, write_topic_sets, CovariateTable, Manifest, ThetaMatrix, Topic,
    TopicSet,
};
use crate::{Error, Result};

pub const DEFAULT_CONCENTRATION: f64 = 50.0;
pub const SYNTH_MODEL_ID: &str = "synthetic";
const SIMPLEX_TOLERANCE: f64 = 1e-9;
/// Stream id reserved for category assignment; documents use 0..n.
const ASSIGNMENT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_docs: usize,
    pub n_topics: usize,
    /// (label, share of documents); shares are normalized if they do not sum to 1.
    pub categories: Vec<(String, f64)>,
    pub base_mean: Vec<f64>,
    /// (category, topic) → additive shift of that category's mean.
    pub effects: BTreeMap<(String, usize), f64>,
    pub concentration: f64,
    pub seed: u64,
    pub covariate: String,
}

impl SynthSpec {
    /// Uniform base mean, no effects.
    pub fn null(n_docs: usize, n_topics: usize, categories: &[(&str, f64)], seed: u64) -> Self {
        SynthSpec {
            n_docs,
            n_topics,
            categories: categories.iter().map(|(l, p)| (l.to_string(), *p)).collect(),
            base_mean: vec![1.0 / n_topics as f64; n_topics],
            effects: BTreeMap::new(),
            concentration: DEFAULT_CONCENTRATION,
            seed,
            covariate: "group".to_owned(),
        }
    }

    pub fn with_effect(mut self, category: &str, topic: usize, shift: f64) -> Self {
        self.effects.insert((category.to_owned(), topic), shift);
        self
    }

    /// Mean θ vector of a category (base plus its shifts).
    pub fn category_mean(&self, category: &str) -> Vec<f64> {
        (0..self.n_topics)
            .map(|k| {
                self.base_mean[k]
                    + self
                        .effects
                        .get(&(category.to_owned(), k))
                        .copied()
                        .unwrap_or(0.0)
            })
            .collect()
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_docs == 0 || self.n_topics == 0 {
            return bad("n_docs and n_topics must be positive".into());
        }
        if self.categories.is_empty() {
            return bad("at least one category is required".into());
        }
        if self.categories.iter().any(|(_, p)| !(*p > 0.0) || !p.is_finite()) {
            return bad("category shares must be positive".into());
        }
        if !(self.concentration > 0.0) || !self.concentration.is_finite() {
            return bad("concentration must be positive".into());
        }
        if self.base_mean.len() != self.n_topics {
            return bad(format!(
                "base_mean has {} entries for {} topics",
                self.base_mean.len(),
                self.n_topics
            ));
        }
        let s: f64 = self.base_mean.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOLERANCE {
            return bad(format!("base_mean sums to {s}, not 1"));
        }
        for (cat, topic) in self.effects.keys() {
            if *topic >= self.n_topics {
                return bad(format!("effect on topic {topic} out of range"));
            }
            if !self.categories.iter().any(|(l, _)| l == cat) {
                return bad(format!("effect for unknown category {cat:?}"));
            }
        }
        for (cat, _) in &self.categories {
            let mean = self.category_mean(cat);
            let shift_sum: f64 = mean.iter().sum::<f64>() - 1.0;
            if shift_sum.abs() > SIMPLEX_TOLERANCE {
                return bad(format!(
                    "infeasible simplex shift: shifts for {cat:?} sum to {shift_sum}, not 0"
                ));
            }
            if let Some(k) = mean.iter().position(|&m| m <= 0.0) {
                return bad(format!(
                    "infeasible simplex shift: {cat:?} mean for topic {k} is {}",
                    mean[k]
                ));
            }
        }
        Ok(())
    }
}

/// Known sum-contrast coefficients of a synthetic design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub categories: Vec<String>,
    /// Per topic: unweighted mean of the category means.
    pub intercept: Vec<f64>,
    /// (category, topic) → category mean minus `intercept[topic]`.
    pub effects: BTreeMap<(String, usize), f64>,
}

impl Truth {
    pub fn effect(&self, category: &str, topic: usize) -> f64 {
        self.effects[&(category.to_owned(), topic)]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["topic_index", "term", "value"])?;
        for (k, v) in self.intercept.iter().enumerate() {
            w.write_record([k.to_string(), crate::linstat::INTERCEPT.to_owned(), v.to_string()])?;
            for c in &self.categories {
                w.write_record([k.to_string(), c.clone(), self.effect(c, k).to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBundle {
    pub topics: TopicSet,
    pub theta: ThetaMatrix,
    pub covariates: CovariateTable,
    pub truth: Truth,
}

impl SyntheticBundle {
    /// Write `topics.csv`, `theta.csv`, `covariates.csv`, `truth.csv` and
    /// `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Manifest> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_topic_sets(std::slice::from_ref(&self.topics), &dir.join("topics.csv"))?;
        write_theta(&self.theta, &dir.join("theta.csv"))?;
        write_covariates(&self.covariates, &dir.join("covariates.csv"))?;
        self.truth.write_csv(&dir.join("truth.csv"))?;
        let manifest = Manifest {
            model_id: self.topics.model_id.clone(),
            topics: "topics.csv".into(),
            theta: "theta.csv".into(),
            covariates: "covariates.csv".into(),
            embeddings: None,
            dim: None,
            normalized: true,
            provenance: Some("synthetic bundle with known category effects".into()),
        };
        manifest.save(&dir.join("manifest.json"))?;
        Ok(manifest)
    }
}

/// Exact per-category document counts by largest remainder.
fn quotas(n: usize, shares: &[f64]) -> Vec<usize> {
    let total: f64 = shares.iter().sum();
    let raw: Vec<f64> = shares.iter().map(|s| s / total * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut rest: Vec<usize> = (0..shares.len()).collect();
    rest.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let missing = n - counts.iter().sum::<usize>();
    for &i in rest.iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticBundle> {
    spec.check()?;
    let labels: Vec<&str> = spec.categories.iter().map(|(l, _)| l.as_str()).collect();
    let shares: Vec<f64> = spec.categories.iter().map(|(_, p)| *p).collect();

    let mut assignment: Vec<usize> = quotas(spec.n_docs, &shares)
        .into_iter()
        .enumerate()
        .flat_map(|(c, n)| std::iter::repeat_n(c, n))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(ASSIGNMENT_STREAM);
    assignment.shuffle(&mut rng);

    let gammas: Vec<Vec<Gamma<f64>>> = labels
        .iter()
        .map(|c| {
            spec.category_mean(c)
                .iter()
                .map(|m| {
                    Gamma::new(spec.concentration * m, 1.0)
                        .map_err(|e| Error::Config(format!("gamma shape: {e}")))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let means: Vec<Vec<f64>> = labels.iter().map(|c| spec.category_mean(c)).collect();

    let mut values = Vec::with_capacity(spec.n_docs * spec.n_topics);
    for (d, &c) in assignment.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(d as u64);
        let draws: Vec<f64> = gammas[c].iter().map(|g| g.sample(&mut rng)).collect();
        let s: f64 = draws.iter().sum();
        if s > 0.0 {
            values.extend(draws.iter().map(|x| x / s));
        } else {
            values.extend_from_slice(&means[c]);
        }
    }

    let doc_ids: Vec<String> = (0..spec.n_docs).map(|d| format!("doc{d:06}")).collect();
    let theta = ThetaMatrix::new(
        SYNTH_MODEL_ID,
        doc_ids.clone(),
        (0..spec.n_topics as u32).collect(),
        values,
        true,
    )?;
    let mut columns = BTreeMap::new();
    columns.insert(
        spec.covariate.clone(),
        assignment.iter().map(|&c| labels[c].to_owned()).collect(),
    );
    let covariates = CovariateTable::new(doc_ids, columns)?;

    let topics = TopicSet::new(
        SYNTH_MODEL_ID,
        (0..spec.n_topics as u32)
            .map(|k| {
                let words: Vec<String> = (0..10).map(|j| format!("topic{k}_w{j}")).collect();
                Topic::new(k, &words)
            })
            .collect(),
    )?;

    let intercept: Vec<f64> = (0..spec.n_topics)
        .map(|k| means.iter().map(|m| m[k]).sum::<f64>() / means.len() as f64)
        .collect();
    let mut effects = BTreeMap::new();
    for (c, label) in labels.iter().enumerate() {
        for k in 0..spec.n_topics {
            effects.insert((label.to_string(), k), means[c][k] - intercept[k]);
        }
    }
    let mut categories: Vec<String> = labels.iter().map(|l| l.to_string()).collect();
    categories.sort();
    Ok(SyntheticBundle {
        topics,
        theta,
        covariates,
        truth: Truth {
            categories,
            intercept,
            effects,
        },
    })
}
