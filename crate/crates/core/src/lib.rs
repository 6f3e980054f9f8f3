//! Evaluation and covariate-effect inference for topic-model exports.
//!
//! The crate is organised around a small file-based interchange format
//! ([`interchange`]) so that topic models fitted in any ecosystem can be
//! compared and analysed without linking against their libraries.
//!
//! * [`corpusstats`] tokenizes raw text, merges collocations and counts
//!   document-level co-occurrences for NPMI.
//! * [`topicmetrics`] scores topics (average pairwise NPMI coherence,
//!   uniqueness, diversity).
//! * [`alignment`] embeds topics and groups them across models into
//!   triplet / semi / unique matches.
//! * [`linstat`] holds the regression kernel: sum-contrast designs, a
//!   pivoted-QR least-squares solver and Student-t tail probabilities.
//! * [`coffee`] runs the bootstrap covariate-effect estimator on top of it.
//! * [`synthgen`] produces synthetic bundles with known effects.

pub mod alignment;
pub mod coffee;
pub mod corpusstats;
mod error;
pub mod interchange;
pub mod linstat;
pub mod synthgen;
pub mod topicmetrics;

pub use error::{Error, Result};
