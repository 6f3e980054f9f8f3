use serde::{Deserialize, Serialize};

use super::design::DesignMatrix;
use crate::{Error, Result};

/// Relative threshold on `|R_kk| / |R_00|` below which a pivot is
/// considered numerically zero.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    /// Length p; aliased columns of a rank-deficient design are NaN.
    pub coefficients: Vec<f64>,
    pub rank: usize,
    pub df_resid: usize,
    pub residual_sum_squares: f64,
}

impl OlsFit {
    /// Full column rank. Rank-deficient fits are not used downstream.
    pub fn is_full_rank(&self) -> bool {
        self.rank == self.coefficients.len()
    }
}

/// Householder QR with column pivoting of an n×p matrix.
///
/// The factorization is reusable: [`QrFactor::solve`] applies it to any
/// number of right-hand sides, which is how one bootstrap design serves
/// every topic column.
#[derive(Debug, Clone)]
pub struct QrFactor {
    n: usize,
    p: usize,
    /// Householder vectors, one per eliminated column, each of length n - k.
    reflectors: Vec<Vec<f64>>,
    /// Upper-triangular R (rank × p) in pivoted column order, row-major.
    r: Vec<f64>,
    /// `perm[k]` is the original column sitting at pivoted position k.
    perm: Vec<usize>,
    rank: usize,
}

impl QrFactor {
    /// Factor a row-major n×p matrix.
    pub fn new(n: usize, p: usize, row_major: &[f64]) -> Result<Self> {
        if row_major.len() != n * p {
            return Err(Error::Dimension(format!(
                "expected {n}x{p} = {} values, got {}",
                n * p,
                row_major.len()
            )));
        }
        if let Some(i) = row_major.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "design entry ({}, {})",
                i / p.max(1),
                i % p.max(1)
            )));
        }
        // column-major working copy
        let mut cols: Vec<Vec<f64>> = (0..p)
            .map(|j| (0..n).map(|i| row_major[i * p + j]).collect())
            .collect();
        let mut perm: Vec<usize> = (0..p).collect();
        let mut reflectors = Vec::new();
        let steps = n.min(p);
        let mut rank = 0;
        let mut r00 = 0.0;

        for k in 0..steps {
            // pivot: remaining column with the largest trailing norm
            let norms: Vec<f64> = cols[k..]
                .iter()
                .map(|c| c[k..].iter().map(|v| v * v).sum::<f64>().sqrt())
                .collect();
            let (offset, &best) = norms
                .iter()
                .enumerate()
                .fold((0, &norms[0]), |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc });
            if k == 0 {
                r00 = best;
            }
            if best == 0.0 || best <= RANK_TOLERANCE * r00 {
                break;
            }
            cols.swap(k, k + offset);
            perm.swap(k, k + offset);

            let x = &cols[k][k..];
            let alpha = if x[0] >= 0.0 { -best } else { best };
            let mut v: Vec<f64> = x.to_vec();
            v[0] -= alpha;
            let vnorm2: f64 = v.iter().map(|a| a * a).sum();
            if vnorm2 > 0.0 {
                let beta = 2.0 / vnorm2;
                for col in cols.iter_mut().skip(k) {
                    let tail = &mut col[k..];
                    let dot: f64 = v.iter().zip(tail.iter()).map(|(a, b)| a * b).sum();
                    let s = beta * dot;
                    for (t, vi) in tail.iter_mut().zip(&v) {
                        *t -= s * vi;
                    }
                }
            }
            reflectors.push(v);
            rank += 1;
        }

        let mut r = vec![0.0; rank * p];
        for i in 0..rank {
            for j in i..p {
                r[i * p + j] = cols[j][i];
            }
        }
        Ok(QrFactor {
            n,
            p,
            reflectors,
            r,
            perm,
            rank,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.p
    }

    /// Least-squares solution for one right-hand side.
    pub fn solve(&self, y: &[f64]) -> Result<OlsFit> {
        if y.len() != self.n {
            return Err(Error::Dimension(format!(
                "response has {} rows, design has {}",
                y.len(),
                self.n
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("response row {i}")));
        }
        let mut qty = y.to_vec();
        for (k, v) in self.reflectors.iter().enumerate() {
            let vnorm2: f64 = v.iter().map(|a| a * a).sum();
            if vnorm2 == 0.0 {
                continue;
            }
            let tail = &mut qty[k..];
            let dot: f64 = v.iter().zip(tail.iter()).map(|(a, b)| a * b).sum();
            let s = 2.0 * dot / vnorm2;
            for (t, vi) in tail.iter_mut().zip(v) {
                *t -= s * vi;
            }
        }
        let rss: f64 = qty[self.rank..].iter().map(|v| v * v).sum();

        // back-substitution on the leading rank×rank block
        let p = self.p;
        let mut z = vec![0.0; self.rank];
        for i in (0..self.rank).rev() {
            let mut acc = qty[i];
            for j in i + 1..self.rank {
                acc -= self.r[i * p + j] * z[j];
            }
            z[i] = acc / self.r[i * p + i];
        }
        let mut coefficients = vec![f64::NAN; p];
        for (k, &orig) in self.perm.iter().enumerate().take(self.rank) {
            coefficients[orig] = z[k];
        }
        Ok(OlsFit {
            coefficients,
            rank: self.rank,
            df_resid: self.n.saturating_sub(self.rank),
            residual_sum_squares: rss,
        })
    }
}

/// Ordinary least squares `y ~ X` via pivoted Householder QR.
pub fn ols_fit(design: &DesignMatrix, y: &[f64]) -> Result<OlsFit> {
    if design.n_rows == 0 {
        return Err(Error::Dimension("design has no rows".into()));
    }
    if y.len() != design.n_rows {
        return Err(Error::Dimension(format!(
            "response has {} rows, design has {}",
            y.len(),
            design.n_rows
        )));
    }
    QrFactor::new(design.n_rows, design.n_cols(), &design.values)?.solve(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linstat::design::{build_design, ContrastScheme};
    use approx::assert_abs_diff_eq;

    #[test]
    fn intercept_only_mean() {
        let d = build_design(&["x", "x", "x"], ContrastScheme::sum()).unwrap();
        let fit = ols_fit(&d, &[1.0, 2.0, 3.0]).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], 2.0, epsilon = 1e-14);
        assert_eq!(fit.df_resid, 2);
        assert_abs_diff_eq!(fit.residual_sum_squares, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn balanced_two_categories() {
        let d = build_design(&["A", "A", "B", "B"], ContrastScheme::sum()).unwrap();
        let fit = ols_fit(&d, &[0.2, 0.2, 0.4, 0.4]).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], 0.30, epsilon = 1e-14);
        assert_abs_diff_eq!(fit.coefficients[1], -0.10, epsilon = 1e-14);
        assert_abs_diff_eq!(fit.coefficients[0] + fit.coefficients[1], 0.2, epsilon = 1e-14);
        assert_eq!(fit.df_resid, 2);
    }

    #[test]
    fn unbalanced_intercept_is_mean_of_means() {
        let d = build_design(&["A", "B", "B"], ContrastScheme::sum()).unwrap();
        let fit = ols_fit(&d, &[0.2, 0.4, 0.4]).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], 0.30, epsilon = 1e-14);
        assert_abs_diff_eq!(fit.coefficients[1], -0.10, epsilon = 1e-14);
    }

    #[test]
    fn rank_deficient_design_reports_lower_rank() {
        // second column duplicates the first
        let x = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let qr = QrFactor::new(3, 2, &x).unwrap();
        assert_eq!(qr.rank(), 1);
        let fit = qr.solve(&[1.0, 2.0, 3.0]).unwrap();
        assert!(!fit.is_full_rank());
        assert_eq!(fit.df_resid, 2);
        assert_eq!(fit.coefficients.iter().filter(|c| c.is_nan()).count(), 1);
    }

    #[test]
    fn non_finite_inputs_rejected() {
        let d = build_design(&["A", "B"], ContrastScheme::sum()).unwrap();
        assert!(matches!(ols_fit(&d, &[0.1, f64::NAN]), Err(Error::NonFinite(_))));
        assert!(QrFactor::new(1, 1, &[f64::INFINITY]).is_err());
    }

    #[test]
    fn length_mismatch_rejected() {
        let d = build_design(&["A", "B"], ContrastScheme::sum()).unwrap();
        assert!(ols_fit(&d, &[0.1]).is_err());
    }

    #[test]
    fn factor_reused_across_responses() {
        let d = build_design(&["A", "B", "C", "A", "B", "C"], ContrastScheme::sum()).unwrap();
        let qr = QrFactor::new(d.n_rows, d.n_cols(), &d.values).unwrap();
        let y1 = [1.0, 2.0, 3.0, 1.0, 2.0, 3.0];
        let y2 = [0.5, 0.5, 0.5, 0.5, 0.5, 0.5];
        let f1 = qr.solve(&y1).unwrap();
        let f2 = qr.solve(&y2).unwrap();
        assert_abs_diff_eq!(f1.coefficients[0], 2.0, epsilon = 1e-13);
        assert_abs_diff_eq!(f1.coefficients[1], -1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(f2.coefficients[1], 0.0, epsilon = 1e-13);
        assert_eq!(f1, ols_fit(&d, &y1).unwrap());
    }
}
