// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::{symmetric_eigen, Matrix};
use crate::error::{Error, Result};

/// Principal components fitted by [`pca_fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k x d`, orthonormal rows.
    pub components: Matrix,
    /// Nonincreasing, nonnegative; sample-covariance eigenvalues.
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.rows()
    }

    /// Maps projected coordinates back into data space.
    pub fn reconstruct(&self, projected: &Matrix) -> Result<Matrix> {
        let mut out = projected.matmul(&self.components)?;
        for r in 0..out.rows() {
            for (v, m) in out.row_mut(r).iter_mut().zip(&self.mean) {
                *v += m;
            }
        }
        Ok(out)
    }
}

/// PCA through the sample covariance (divisor `n - 1`) and a Jacobi
/// eigen-decomposition.
pub fn pca_fit(data: &Matrix, k: usize) -> Result<PcaModel> {
    let n = data.rows();
    let d = data.cols();
    if n < 2 {
        return Err(Error::InvalidInput(format!("pca needs at least 2 rows, got {n}")));
    }
    if k == 0 || k > n.min(d) {
        return Err(Error::InvalidInput(format!(
            "pca with k={k} on {n}x{d} data"
        )));
    }
    if !data.is_finite() {
        return Err(Error::InvalidInput("pca on non-finite data".into()));
    }
    let mean = data.mean_row();
    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for row in data.row_iter() {
        for ((c, x), m) in centered.iter_mut().zip(row).zip(&mean) {
            *c = x - m;
        }
        for i in 0..d {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            let cov_row = cov.row_mut(i);
            for j in 0..d {
                cov_row[j] += ci * centered[j];
            }
        }
    }
    cov.scale(1.0 / (n - 1) as f64);
    let eig = symmetric_eigen(&cov)?;
    let idx: Vec<usize> = (0..k).collect();
    Ok(PcaModel {
        mean,
        components: eig.vectors.select_rows(&idx),
        explained_variance: eig.values[..k].iter().map(|v| v.max(0.0)).collect(),
    })
}

/// `(data - mean) * components^T`.
pub fn pca_project(model: &PcaModel, data: &Matrix) -> Result<Matrix> {
    let d = model.mean.len();
    if data.cols() != d {
        return Err(Error::DimensionMismatch(format!(
            "projecting {}-column data with a {d}-dimensional pca",
            data.cols()
        )));
    }
    let k = model.n_components();
    let mut out = Matrix::zeros(data.rows(), k);
    let mut centered = vec![0.0; d];
    for r in 0..data.rows() {
        for ((c, x), m) in centered.iter_mut().zip(data.row(r)).zip(&model.mean) {
            *c = x - m;
        }
        for c in 0..k {
            out.set(r, c, super::dot(&centered, model.components.row(c)));
        }
    }
    Ok(out)
}
