//! Gaussian-copula algebra for the frugal simulators.
//!
//! Correlation matrices are supplied on the Spearman scale and converted
//! entrywise to Pearson via `2 sin(pi r / 6)`, then projected onto the PSD
//! cone when the conversion breaks positive semi-definiteness.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EIGEN_FLOOR: f64 = 1e-10;

/// Symmetric unit-diagonal matrix of Spearman rank correlations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct CorrelationMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::Config("correlation matrix must be non-empty".into()));
        }
        let mut entries = Vec::with_capacity(dim * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Config(format!("correlation row {i} has {} entries, expected {dim}", row.len())));
            }
            entries.extend_from_slice(row);
        }
        let m = Self { dim, entries };
        m.check()?;
        Ok(m)
    }

    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = 1.0;
        }
        Self { dim, entries }
    }

    fn check(&self) -> Result<()> {
        let d = self.dim;
        for i in 0..d {
            if self.get(i, i) != 1.0 {
                return Err(Error::Config(format!("correlation diagonal entry {i} is not 1")));
            }
            for j in 0..d {
                let v = self.get(i, j);
                if !(-1.0..=1.0).contains(&v) {
                    return Err(Error::Config(format!("correlation entry ({i},{j}) = {v} outside [-1, 1]")));
                }
                if v != self.get(j, i) {
                    return Err(Error::Config(format!("correlation matrix not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    /// Sets both (i, j) and (j, i).
    pub fn set_symmetric(&mut self, i: usize, j: usize, value: f64) -> Result<()> {
        if i == j {
            return Err(Error::Config("cannot overwrite a correlation diagonal".into()));
        }
        if !(-1.0..=1.0).contains(&value) {
            return Err(Error::Config(format!("correlation {value} outside [-1, 1]")));
        }
        let d = self.dim;
        self.entries[i * d + j] = value;
        self.entries[j * d + i] = value;
        Ok(())
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    /// Pearson-scale matrix, projected to the nearest PSD correlation matrix
    /// by eigenvalue clipping and diagonal renormalisation when needed.
    pub fn to_pearson(&self) -> DMatrix<f64> {
        let d = self.dim;
        let m = DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { spearman_to_pearson(self.get(i, j)) });
        nearest_psd_correlation(m)
    }
}

impl TryFrom<Vec<Vec<f64>>> for CorrelationMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<CorrelationMatrix> for Vec<Vec<f64>> {
    fn from(m: CorrelationMatrix) -> Self {
        m.rows()
    }
}

pub fn spearman_to_pearson(r_s: f64) -> f64 {
    2.0 * (std::f64::consts::PI * r_s / 6.0).sin()
}

pub fn pearson_to_spearman(r_p: f64) -> f64 {
    6.0 / std::f64::consts::PI * (r_p / 2.0).asin()
}

fn nearest_psd_correlation(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    // PSD up to round-off: leave singular matrices for the caller to reject.
    if eig.eigenvalues.iter().all(|&l| l >= -EIGEN_FLOOR) {
        return m;
    }
    let clipped = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| l.max(EIGEN_FLOOR)));
    let q = &eig.eigenvectors;
    let a = q * DMatrix::from_diagonal(&clipped) * q.transpose();
    let d = a.nrows();
    let scale: Vec<f64> = (0..d).map(|i| a[(i, i)].sqrt()).collect();
    DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { (a[(i, j)] / (scale[i] * scale[j])).clamp(-1.0, 1.0) })
}

/// Conditional law of the last coordinate given the others, precomputed
/// once per matrix: `mean = weights . scores`, `sd` fixed.
#[derive(Clone, Debug)]
pub struct ConditionalCopula {
    pub weights: Vec<f64>,
    pub sd: f64,
}

impl ConditionalCopula {
    /// `pearson` must be a valid correlation matrix; the last row/column is
    /// the coordinate being conditioned.
    pub fn from_pearson(pearson: &DMatrix<f64>) -> Result<Self> {
        let d = pearson.nrows();
        if d < 2 {
            return Ok(Self { weights: Vec::new(), sd: 1.0 });
        }
        let k = d - 1;
        let r11 = pearson.view((0, 0), (k, k)).into_owned();
        let r12 = pearson.view((0, k), (k, 1)).column(0).into_owned();
        let chol = r11
            .cholesky()
            .ok_or_else(|| Error::IllConditioned("leading block is not positive definite".into()))?;
        let diag_min = chol.l().diagonal().iter().fold(f64::INFINITY, |a, &b| a.min(b));
        if diag_min < 1e-7 {
            return Err(Error::IllConditioned(format!("leading block is numerically singular (pivot {diag_min:e})")));
        }
        let w = chol.solve(&r12);
        let var = 1.0 - r12.dot(&w);
        Ok(Self {
            weights: w.iter().copied().collect(),
            sd: var.max(0.0).sqrt().min(1.0),
        })
    }

    pub fn mean(&self, scores: &[f64]) -> f64 {
        self.weights.iter().zip(scores).map(|(w, s)| w * s).sum()
    }
}

/// Mean and standard deviation of the last normal score given the others.
pub fn gaussian_copula_conditional(r: &CorrelationMatrix, scores: &[f64]) -> Result<(f64, f64)> {
    if scores.len() + 1 != r.dim() {
        return Err(Error::Config(format!("expected {} conditioning scores, got {}", r.dim() - 1, scores.len())));
    }
    let c = ConditionalCopula::from_pearson(&r.to_pearson())?;
    Ok((c.mean(scores), c.sd))
}

/// Lower Cholesky factor of a Pearson correlation block, used to draw
/// jointly normal scores.
pub fn cholesky_factor(pearson: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    pearson
        .clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::IllConditioned("covariate block is not positive definite".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn r4() -> CorrelationMatrix {
        CorrelationMatrix::new(vec![
            vec![1.0, 0.5, 0.3, 0.1, 0.8],
            vec![0.5, 1.0, 0.4, 0.1, 0.8],
            vec![0.3, 0.4, 1.0, 0.1, 0.8],
            vec![0.1, 0.1, 0.1, 1.0, 0.8],
            vec![0.8, 0.8, 0.8, 0.8, 1.0],
        ])
        .unwrap()
    }

    /// Gaussian elimination with partial pivoting, independent of nalgebra.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, p);
            b.swap(c, p);
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                let (top, rest) = a.split_at_mut(r);
                for (x, p) in rest[0][c..].iter_mut().zip(&top[c][c..]) {
                    *x -= f * p;
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    #[test]
    fn identity_gives_standard_normal() {
        let (m, sd) = gaussian_copula_conditional(&CorrelationMatrix::identity(4), &[0.3, -1.0, 2.0]).unwrap();
        assert_eq!((m, sd), (0.0, 1.0));
    }

    #[test]
    fn bivariate_closed_form() {
        let rp: f64 = 0.6;
        let rs = pearson_to_spearman(rp);
        let r = CorrelationMatrix::new(vec![vec![1.0, rs], vec![rs, 1.0]]).unwrap();
        let (m, sd) = gaussian_copula_conditional(&r, &[1.5]).unwrap();
        assert!((m - rp * 1.5).abs() < 1e-12);
        assert!((sd - (1.0 - rp * rp).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn r4_zero_scores_against_dense_solve() {
        let r = r4();
        let p = r.to_pearson();
        let r11: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| p[(i, j)]).collect()).collect();
        let r12: Vec<f64> = (0..4).map(|i| p[(i, 4)]).collect();
        let w = dense_solve(r11, r12.clone());
        let sd_oracle = (1.0 - r12.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()).sqrt();
        let (m, sd) = gaussian_copula_conditional(&r, &[0.0; 4]).unwrap();
        assert_eq!(m, 0.0);
        assert!((sd - sd_oracle).abs() < 1e-10, "{sd} vs {sd_oracle}");
    }

    #[test]
    fn singular_leading_block_is_reported() {
        let r = CorrelationMatrix::new(vec![vec![1.0, 1.0, 0.2], vec![1.0, 1.0, 0.2], vec![0.2, 0.2, 1.0]]).unwrap();
        assert!(matches!(gaussian_copula_conditional(&r, &[0.0, 0.0]), Err(Error::IllConditioned(_))));
    }

    #[test]
    fn rejects_malformed_matrices() {
        assert!(CorrelationMatrix::new(vec![vec![1.0, 0.2], vec![0.3, 1.0]]).is_err());
        assert!(CorrelationMatrix::new(vec![vec![0.9, 0.2], vec![0.2, 1.0]]).is_err());
        assert!(CorrelationMatrix::new(vec![vec![1.0, 1.2], vec![1.2, 1.0]]).is_err());
        assert!(CorrelationMatrix::new(vec![vec![1.0, 0.2]]).is_err());
    }

    #[test]
    fn non_psd_input_is_projected() {
        // rho = -1 against three strongly positively related columns.
        let mut r = r4();
        r.set_symmetric(3, 4, -1.0).unwrap();
        let p = r.to_pearson();
        let eig = p.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&l| l > -1e-12));
        for i in 0..5 {
            assert_eq!(p[(i, i)], 1.0);
        }
    }

    proptest! {
        #[test]
        fn spearman_pearson_maps_unit_interval(r in -1.0f64..=1.0) {
            let p = spearman_to_pearson(r);
            prop_assert!((-1.0..=1.0).contains(&p));
            prop_assert!((pearson_to_spearman(p) - r).abs() < 1e-12);
        }

        #[test]
        fn conditional_sd_in_unit_interval(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0) {
            let r = CorrelationMatrix::new(vec![vec![1.0, a, b], vec![a, 1.0, c], vec![b, c, 1.0]]).unwrap();
            if let Ok((_, sd)) = gaussian_copula_conditional(&r, &[0.1, -0.2]) {
                prop_assert!((0.0..=1.0).contains(&sd));
            }
        }
    }

    #[test]
    fn conversion_fixes_zero_and_unit() {
        assert_eq!(spearman_to_pearson(0.0), 0.0);
        assert!((spearman_to_pearson(1.0) - 1.0).abs() < 1e-15);
        assert!((spearman_to_pearson(-1.0) + 1.0).abs() < 1e-15);
    }
}
