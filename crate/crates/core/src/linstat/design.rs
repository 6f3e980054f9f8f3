use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const INTERCEPT: &str = "Intercept";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContrastKind {
    Sum,
}

/// Categorical coding scheme.
///
/// Only sum (deviation) coding is supported. Levels are ordered
/// lexicographically ascending and the last level is the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastScheme {
    pub kind: ContrastKind,
}

impl Default for ContrastScheme {
    fn default() -> Self {
        ContrastScheme {
            kind: ContrastKind::Sum,
        }
    }
}

impl ContrastScheme {
    pub fn sum() -> Self {
        Self::default()
    }

    /// Distinct levels of `column` in scheme order (reference last).
    pub fn levels<S: AsRef<str>>(&self, column: &[S]) -> Vec<String> {
        column
            .iter()
            .map(|s| s.as_ref())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(str::to_owned)
            .collect()
    }
}

/// Dense row-major design matrix produced by sum coding.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub n_rows: usize,
    /// `Intercept` followed by one column per non-reference category.
    pub columns: Vec<String>,
    pub values: Vec<f64>,
    pub categories: Vec<String>,
    pub reference_category: String,
}

impl DesignMatrix {
    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n_cols() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let p = self.n_cols();
        &self.values[row * p..(row + 1) * p]
    }

    pub fn is_intercept_only(&self) -> bool {
        self.n_cols() == 1
    }

    /// Coefficient of the reference category implied by the zero-sum
    /// constraint: the negative sum of the contrast coefficients.
    pub fn implied_reference(&self, coefficients: &[f64]) -> f64 {
        -coefficients[1..].iter().sum::<f64>()
    }

    /// Per-category effect vector in `categories` order, reference included.
    pub fn category_effects(&self, coefficients: &[f64]) -> Vec<f64> {
        let mut out = coefficients[1..].to_vec();
        if !self.is_intercept_only() {
            out.push(self.implied_reference(coefficients));
        }
        out
    }
}

/// Result of [`merge_small_categories`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedColumn {
    pub labels: Vec<String>,
    /// Original categories that were folded into the merged label.
    pub merged: Vec<String>,
    /// Only one distinct category remains; the design will be intercept-only.
    pub degenerate: bool,
}

/// Replace every category with fewer than `threshold` occurrences by
/// `merged_label`.
pub fn merge_small_categories<S: AsRef<str>>(
    column: &[S],
    threshold: usize,
    merged_label: &str,
) -> MergedColumn {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for label in column {
        *counts.entry(label.as_ref()).or_default() += 1;
    }
    let small: BTreeSet<&str> = counts
        .iter()
        .filter(|(_, &c)| c < threshold)
        .map(|(&l, _)| l)
        .collect();
    let labels: Vec<String> = column
        .iter()
        .map(|l| {
            let l = l.as_ref();
            if small.contains(l) {
                merged_label.to_owned()
            } else {
                l.to_owned()
            }
        })
        .collect();
    let distinct = labels.iter().collect::<BTreeSet<_>>().len();
    let degenerate = distinct <= 1;
    if degenerate && !labels.is_empty() {
        log::warn!("degenerate covariate: a single category remains after merging");
    }
    MergedColumn {
        labels,
        merged: small
            .into_iter()
            .filter(|&l| l != merged_label)
            .map(str::to_owned)
            .collect(),
        degenerate,
    }
}

/// Sum-coded design for `column`, levels derived from the column itself.
pub fn build_design<S: AsRef<str>>(column: &[S], scheme: ContrastScheme) -> Result<DesignMatrix> {
    let levels = scheme.levels(column);
    build_design_with_levels(column, &levels)
}

/// Sum-coded design against a fixed level list (reference = last level).
///
/// Used when a bootstrap resample must keep the column layout of the full
/// data even if some level happens to be absent from the resample.
pub fn build_design_with_levels<S: AsRef<str>>(
    column: &[S],
    levels: &[String],
) -> Result<DesignMatrix> {
    if levels.is_empty() {
        return Err(Error::invariant("design", "covariate has no categories"));
    }
    let index: BTreeMap<&str, usize> = levels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let reference = levels.len() - 1;
    let p = levels.len();
    let mut values = Vec::with_capacity(column.len() * p);
    for (row, label) in column.iter().enumerate() {
        let label = label.as_ref();
        let level = *index.get(label).ok_or_else(|| {
            Error::invariant("design", format!("row {row}: unknown category {label:?}"))
        })?;
        values.push(1.0);
        for j in 0..reference {
            values.push(if level == reference {
                -1.0
            } else if level == j {
                1.0
            } else {
                0.0
            });
        }
    }
    let mut columns = Vec::with_capacity(p);
    columns.push(INTERCEPT.to_owned());
    columns.extend(levels[..reference].iter().cloned());
    Ok(DesignMatrix {
        n_rows: column.len(),
        columns,
        values,
        categories: levels.to_vec(),
        reference_category: levels[reference].clone(),
    })
}
