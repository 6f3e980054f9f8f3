//! Regression kernel: sum-contrast designs, least squares, Student-t tails.

mod design;
mod ols;
pub mod special;

pub use design::{
    build_design, build_design_with_levels, merge_small_categories, ContrastKind, ContrastScheme,
    DesignMatrix, MergedColumn, INTERCEPT,
};
pub use ols::{ols_fit, OlsFit, QrFactor};
pub use special::t_sf;

/// Two-sided p-value `2 · P(T > |t|)`.
pub fn two_sided_p(t: f64, df: f64) -> crate::Result<f64> {
    Ok((2.0 * t_sf(t.abs(), df)?).min(1.0))
}
