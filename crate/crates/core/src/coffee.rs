//! Bootstrapped covariate-effect estimation (COFFEE).
//!
//! θ rows and covariate rows are resampled jointly with replacement; each
//! resample gets a sum-coded design, one QR factorization, and one least
//! squares solve per topic. Coefficients are then aggregated across samples:
//! the mean is the estimate, the sample standard deviation is the standard
//! error, and the median residual df drives a two-sided t test.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::interchange::{CovariateTable, ThetaMatrix, TopicSet};
use crate::linstat::{build_design_with_levels, merge_small_categories, two_sided_p, QrFactor, INTERCEPT};
use crate::{Error, Result};

pub const DEFAULT_BOOTSTRAP: usize = 25;
pub const DEFAULT_MIN_FEASIBLE: usize = 5;
pub const MERGED_LABEL: &str = "Other";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoffeeConfig {
    pub n_bootstrap: usize,
    pub seed: u64,
    pub covariate: String,
    pub min_feasible_samples: usize,
    pub renormalize_theta: bool,
    /// Fold categories with fewer documents than this into [`MERGED_LABEL`].
    pub merge_threshold: Option<usize>,
}

impl CoffeeConfig {
    pub fn new(covariate: impl Into<String>, seed: u64) -> Self {
        CoffeeConfig {
            n_bootstrap: DEFAULT_BOOTSTRAP,
            seed,
            covariate: covariate.into(),
            min_feasible_samples: DEFAULT_MIN_FEASIBLE,
            renormalize_theta: false,
            merge_threshold: None,
        }
    }

    fn check(&self) -> Result<()> {
        if self.n_bootstrap < 2 {
            return Err(Error::Config("n_bootstrap must be at least 2".into()));
        }
        if self.min_feasible_samples < 2 {
            return Err(Error::Config("min_feasible_samples must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub topic_index: u32,
    pub topic_label: Option<String>,
    pub term: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_value: f64,
    pub p_value: f64,
    pub df: f64,
    pub samples_used: usize,
}

/// Per-topic, per-term effect estimates.
///
/// For each topic the terms are `Intercept`, the non-reference categories
/// in level order, and finally the reference category, whose coefficient is
/// implied by the zero-sum constraint and is aggregated the same way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectTable {
    pub model_id: String,
    pub covariate: String,
    pub rows: Vec<EffectRow>,
}

impl EffectTable {
    pub fn with_topic_labels(mut self, topics: &TopicSet) -> Self {
        for row in &mut self.rows {
            if let Some(t) = topics.topic(row.topic_index) {
                row.topic_label = t.label.clone();
            }
        }
        self
    }

    pub fn row(&self, topic_index: u32, term: &str) -> Option<&EffectRow> {
        self.rows
            .iter()
            .find(|r| r.topic_index == topic_index && r.term == term)
    }
}

/// Aggregated statistics for one (topic, term) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub estimate: f64,
    pub std_error: f64,
    pub t_value: f64,
    pub p_value: f64,
    pub df: f64,
    pub samples_used: usize,
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Fold bootstrap coefficient samples into an estimate, SE, t and p.
///
/// Fewer than `min_feasible` samples NaN-marks every statistic; a zero
/// standard error keeps the estimate but NaN-marks t and p.
pub fn aggregate(coef_samples: &[f64], df_samples: &[f64], min_feasible: usize) -> Aggregate {
    let n = coef_samples.len();
    if n == 0 || n < min_feasible {
        return Aggregate {
            estimate: f64::NAN,
            std_error: f64::NAN,
            t_value: f64::NAN,
            p_value: f64::NAN,
            df: median(df_samples),
            samples_used: n,
        };
    }
    let mean = coef_samples.iter().sum::<f64>() / n as f64;
    let std_error = if n >= 2 {
        let ss: f64 = coef_samples.iter().map(|c| (c - mean).powi(2)).sum();
        let sd = (ss / (n - 1) as f64).sqrt();
        // rounding residue of a constant sample set
        if sd <= 64.0 * f64::EPSILON * mean.abs() {
            0.0
        } else {
            sd
        }
    } else {
        f64::NAN
    };
    let df = median(df_samples);
    let (t_value, p_value) = if std_error > 0.0 && df > 0.0 {
        let t = mean / std_error;
        (t, two_sided_p(t, df).unwrap_or(f64::NAN))
    } else {
        (f64::NAN, f64::NAN)
    };
    Aggregate {
        estimate: mean,
        std_error,
        t_value,
        p_value,
        df,
        samples_used: n,
    }
}

/// Row indices of bootstrap sample `sample_index`: `n` draws with
/// replacement from a ChaCha stream keyed by `(seed, sample_index)`.
pub fn resample_indices(n: usize, seed: u64, sample_index: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample_index);
    if n == 0 {
        return Vec::new();
    }
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// A joint resample of θ rows and covariate rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Resample {
    pub indices: Vec<usize>,
    pub theta: ThetaMatrix,
    pub covariates: CovariateTable,
}

/// Materialize bootstrap sample `sample_index` of an aligned (θ, covariate)
/// pair. The same index vector selects both sides. Resampled doc ids carry
/// a `#<position>` suffix to stay unique.
pub fn resample(
    theta: &ThetaMatrix,
    covariates: &CovariateTable,
    sample_index: u64,
    config: &CoffeeConfig,
) -> Result<Resample> {
    let aligned = align_rows(theta, covariates)?;
    let indices = resample_indices(theta.n_docs(), config.seed, sample_index);
    let doc_ids: Vec<String> = indices
        .iter()
        .enumerate()
        .map(|(pos, &i)| format!("{}#{pos}", theta.doc_ids[i]))
        .collect();
    let values = indices
        .iter()
        .flat_map(|&i| theta.row(i).iter().copied())
        .collect();
    let columns = covariates
        .columns
        .iter()
        .map(|(name, col)| {
            (
                name.clone(),
                indices.iter().map(|&i| col[aligned[i]].clone()).collect(),
            )
        })
        .collect();
    Ok(Resample {
        theta: ThetaMatrix::new(
            theta.model_id.clone(),
            doc_ids.clone(),
            theta.topic_indices.clone(),
            values,
            theta.normalized,
        )?,
        covariates: CovariateTable::new(doc_ids, columns)?,
        indices,
    })
}

/// For each θ row, the matching covariate row (exact doc_id equality).
fn align_rows(theta: &ThetaMatrix, covariates: &CovariateTable) -> Result<Vec<usize>> {
    let pos: HashMap<&str, usize> = covariates
        .doc_ids
        .iter()
        .enumerate()
        .map(|(i, d)| (d.as_str(), i))
        .collect();
    let aligned = theta
        .doc_ids
        .iter()
        .map(|d| {
            pos.get(d.as_str()).copied().ok_or_else(|| {
                Error::invariant("coffee", format!("doc_id {d:?} has no covariate row"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if covariates.doc_ids.len() > theta.n_docs() {
        log::warn!(
            "{} covariate rows have no theta row and are ignored",
            covariates.doc_ids.len() - theta.n_docs()
        );
    }
    Ok(aligned)
}

struct SampleFit {
    /// topic → per-term coefficients (implied reference term last)
    coefs: Vec<Vec<f64>>,
    df_resid: f64,
}

fn fit_sample(
    theta: &ThetaMatrix,
    labels: &[String],
    levels: &[String],
    seed: u64,
    sample_index: u64,
) -> Result<Option<SampleFit>> {
    let n = theta.n_docs();
    let idx = resample_indices(n, seed, sample_index);
    let column: Vec<&str> = idx.iter().map(|&i| labels[i].as_str()).collect();

    let present: HashSet<&str> = column.iter().copied().collect();
    if present.len() != levels.len() {
        return Ok(None);
    }
    let design = build_design_with_levels(&column, levels)?;
    let qr = QrFactor::new(design.n_rows, design.n_cols(), &design.values)?;
    if qr.rank() < design.n_cols() {
        return Ok(None);
    }
    let mut coefs = Vec::with_capacity(theta.n_topics());
    let mut df_resid = 0.0;
    let mut y = vec![0.0; n];
    for k in 0..theta.n_topics() {
        for (dst, &i) in y.iter_mut().zip(&idx) {
            *dst = theta.get(i, k);
        }
        let fit = qr.solve(&y)?;
        df_resid = fit.df_resid as f64;
        let mut terms = fit.coefficients.clone();
        if !design.is_intercept_only() {
            terms.push(design.implied_reference(&fit.coefficients));
        }
        coefs.push(terms);
    }
    Ok(Some(SampleFit { coefs, df_resid }))
}

/// Run the full bootstrap estimator.
///
/// Samples are fitted on the current rayon pool; results are folded in
/// sample-index order, so the output does not depend on the thread count.
pub fn coffee_run(
    theta: &ThetaMatrix,
    covariates: &CovariateTable,
    config: &CoffeeConfig,
) -> Result<EffectTable> {
    config.check()?;
    if theta.n_docs() == 0 {
        return Err(Error::NothingToEvaluate("theta has no documents".into()));
    }
    let column = covariates.column(&config.covariate).ok_or_else(|| {
        Error::Config(format!("covariate column {:?} not found", config.covariate))
    })?;
    let aligned = align_rows(theta, covariates)?;
    let mut labels: Vec<String> = aligned.iter().map(|&i| column[i].clone()).collect();
    if let Some(threshold) = config.merge_threshold {
        let merged = merge_small_categories(&labels, threshold, MERGED_LABEL);
        if !merged.merged.is_empty() {
            log::info!(
                "merged {} small categories into {MERGED_LABEL:?}: {}",
                merged.merged.len(),
                merged.merged.join(", ")
            );
        }
        labels = merged.labels;
    }
    let theta = if config.renormalize_theta {
        let mut t = theta.clone();
        t.renormalize();
        std::borrow::Cow::Owned(t)
    } else {
        std::borrow::Cow::Borrowed(theta)
    };

    let levels = crate::linstat::ContrastScheme::sum().levels(&labels);
    let mut terms = vec![INTERCEPT.to_owned()];
    if levels.len() > 1 {
        terms.extend(levels.iter().cloned());
    }

    let samples: Vec<Option<SampleFit>> = (0..config.n_bootstrap as u64)
        .into_par_iter()
        .map(|s| fit_sample(&theta, &labels, &levels, config.seed, s))
        .collect::<Result<_>>()?;
    let feasible: Vec<&SampleFit> = samples.iter().flatten().collect();
    if feasible.is_empty() {
        return Err(Error::NeverFeasible(format!(
            "none of {} resamples of {:?} had full rank with all {} categories present",
            config.n_bootstrap,
            config.covariate,
            levels.len()
        )));
    }
    log::debug!("{} of {} resamples feasible", feasible.len(), config.n_bootstrap);

    let df_samples: Vec<f64> = feasible.iter().map(|s| s.df_resid).collect();
    let mut rows = Vec::with_capacity(theta.n_topics() * terms.len());
    for (k, &topic_index) in theta.topic_indices.iter().enumerate() {
        for (j, term) in terms.iter().enumerate() {
            let coef: Vec<f64> = feasible.iter().map(|s| s.coefs[k][j]).collect();
            let a = aggregate(&coef, &df_samples, config.min_feasible_samples);
            rows.push(EffectRow {
                topic_index,
                topic_label: None,
                term: term.clone(),
                estimate: a.estimate,
                std_error: a.std_error,
                t_value: a.t_value,
                p_value: a.p_value,
                df: a.df,
                samples_used: a.samples_used,
            });
        }
    }
    Ok(EffectTable {
        model_id: theta.model_id.clone(),
        covariate: config.covariate.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeMap;

    #[test]
    fn aggregate_constant_samples_guard() {
        let a = aggregate(&[0.1, 0.1, 0.1], &[5.0, 5.0, 5.0], 2);
        assert_abs_diff_eq!(a.estimate, 0.1, epsilon = 1e-15);
        assert_eq!(a.std_error, 0.0);
        assert!(a.t_value.is_nan() && a.p_value.is_nan());
    }

    #[test]
    fn aggregate_hand_values() {
        let a = aggregate(&[0.0, 0.2], &[10.0, 12.0], 2);
        assert_abs_diff_eq!(a.estimate, 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(a.std_error, 0.02f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(a.std_error, 0.1414, epsilon = 1e-4);
        assert_eq!(a.df, 11.0);
        assert_abs_diff_eq!(a.t_value, 0.7071, epsilon = 1e-4);
        assert_eq!(a.p_value, two_sided_p(a.t_value, 11.0).unwrap());
    }

    #[test]
    fn aggregate_short_input_is_nan_marked() {
        let a = aggregate(&[0.3], &[7.0], 5);
        assert!(a.estimate.is_nan() && a.std_error.is_nan());
        assert!(a.t_value.is_nan() && a.p_value.is_nan());
        assert_eq!(a.samples_used, 1);
        assert!(aggregate(&[], &[], 5).estimate.is_nan());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[10.0, 12.0]), 11.0);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn resample_indices_are_deterministic() {
        let a = resample_indices(50, 7, 3);
        assert_eq!(a, resample_indices(50, 7, 3));
        assert_ne!(a, resample_indices(50, 7, 4));
        assert_ne!(a, resample_indices(50, 8, 3));
        assert_eq!(a.len(), 50);
        assert!(a.iter().all(|&i| i < 50));
    }

    fn tiny() -> (ThetaMatrix, CovariateTable) {
        let docs: Vec<String> = (0..6).map(|i| format!("d{i}")).collect();
        let theta = ThetaMatrix::new(
            "m",
            docs.clone(),
            vec![0, 1],
            vec![0.1, 0.9, 0.2, 0.8, 0.3, 0.7, 0.4, 0.6, 0.5, 0.5, 0.6, 0.4],
            true,
        )
        .unwrap();
        let mut cols = BTreeMap::new();
        // covariate rows deliberately in a different order
        let mut rev = docs.clone();
        rev.reverse();
        cols.insert(
            "g".to_owned(),
            rev.iter().map(|d| if d < &"d3".to_owned() { "a" } else { "b" }.to_owned()).collect(),
        );
        (theta, CovariateTable::new(rev, cols).unwrap())
    }

    #[test]
    fn resample_keeps_rows_paired() {
        let (theta, cov) = tiny();
        let cfg = CoffeeConfig::new("g", 11);
        let r = resample(&theta, &cov, 2, &cfg).unwrap();
        assert_eq!(r.theta.n_docs(), 6);
        for (pos, &i) in r.indices.iter().enumerate() {
            assert_eq!(r.theta.row(pos), theta.row(i));
            let expected = if i < 3 { "a" } else { "b" };
            assert_eq!(r.covariates.columns["g"][pos], expected);
        }
    }

    #[test]
    fn single_category_is_intercept_only() {
        let (theta, _) = tiny();
        let mut cols = BTreeMap::new();
        cols.insert("g".to_owned(), vec!["x".to_owned(); 6]);
        let cov = CovariateTable::new(theta.doc_ids.clone(), cols).unwrap();
        let table = coffee_run(&theta, &cov, &CoffeeConfig::new("g", 1)).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert!(table.rows.iter().all(|r| r.term == INTERCEPT));
        // bootstrap mean of resample means is close to the column mean
        assert_abs_diff_eq!(table.rows[0].estimate, 0.35, epsilon = 0.1);
    }

    #[test]
    fn missing_covariate_column_is_config_error() {
        let (theta, cov) = tiny();
        assert!(matches!(
            coffee_run(&theta, &cov, &CoffeeConfig::new("nope", 1)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn never_feasible_is_reported() {
        // one document per level: a resample drawing the same row twice
        // misses a level
        let theta = ThetaMatrix::new("m", vec!["a".into(), "b".into()], vec![0], vec![0.2, 0.4], false).unwrap();
        let mut cols = BTreeMap::new();
        cols.insert("g".to_owned(), vec!["x".to_owned(), "y".to_owned()]);
        let cov = CovariateTable::new(theta.doc_ids.clone(), cols).unwrap();
        let seed = (0u64..)
            .find(|&s| {
                (0..2).all(|i| {
                    let idx = resample_indices(2, s, i);
                    idx[0] == idx[1]
                })
            })
            .unwrap();
        let mut cfg = CoffeeConfig::new("g", seed);
        cfg.n_bootstrap = 2;
        cfg.min_feasible_samples = 2;
        assert!(matches!(coffee_run(&theta, &cov, &cfg), Err(Error::NeverFeasible(_))));
    }

    #[test]
    fn config_bounds() {
        let (theta, cov) = tiny();
        let mut cfg = CoffeeConfig::new("g", 1);
        cfg.n_bootstrap = 1;
        assert!(coffee_run(&theta, &cov, &cfg).is_err());
        cfg.n_bootstrap = 10;
        cfg.min_feasible_samples = 1;
        assert!(coffee_run(&theta, &cov, &cfg).is_err());
    }
}
