// SPDX-License-Identifier: MIT OR Apache-2.0

use super::Matrix;
use crate::error::{Error, Result};

/// Eigen-decomposition of a symmetric matrix.
///
/// `values` are sorted nonincreasing; row `i` of `vectors` is the unit
/// eigenvector for `values[i]`, sign-normalised so its largest-magnitude
/// entry is positive.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi rotations until the off-diagonal mass is negligible.
pub fn symmetric_eigen(a: &Matrix) -> Result<SymmetricEigen> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::DimensionMismatch(format!(
            "eigen-decomposition of a {}x{} matrix",
            n,
            a.cols()
        )));
    }
    let mut m = a.clone();
    // columns of v accumulate the rotations
    let mut v = Matrix::identity(n);
    let total: f64 = m.data().iter().map(|x| x * x).sum();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m.get(p, q) * m.get(p, q);
            }
        }
        if off <= total * 1e-32 || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
    order.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]).then(i.cmp(&j)));
    let mut vectors = Matrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (row, &i) in order.iter().enumerate() {
        values.push(diag[i]);
        let mut vec = v.column(i);
        let pivot = vec
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            vec.iter_mut().for_each(|x| *x = -*x);
        }
        vectors.row_mut(row).copy_from_slice(&vec);
    }
    Ok(SymmetricEigen { values, vectors })
}

/// Solves `a * x = b` by Gaussian elimination with partial pivoting.
pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n {
        return Err(Error::DimensionMismatch(format!(
            "solve with {}x{} system and {}x{} right-hand side",
            n,
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut m = a.clone();
    let mut x = b.clone();
    let k = b.cols();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m.get(i, col).abs().total_cmp(&m.get(j, col).abs()))
            .unwrap_or(col);
        if m.get(pivot, col).abs() < 1e-300 {
            return Err(Error::InvalidInput("singular system".into()));
        }
        if pivot != col {
            for c in 0..n {
                let t = m.get(col, c);
                m.set(col, c, m.get(pivot, c));
                m.set(pivot, c, t);
            }
            for c in 0..k {
                let t = x.get(col, c);
                x.set(col, c, x.get(pivot, c));
                x.set(pivot, c, t);
            }
        }
        for r in (col + 1)..n {
            let f = m.get(r, col) / m.get(col, col);
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                m.set(r, c, m.get(r, c) - f * m.get(col, c));
            }
            for c in 0..k {
                x.set(r, c, x.get(r, c) - f * x.get(col, c));
            }
        }
    }
    for col in (0..n).rev() {
        for c in 0..k {
            let mut acc = x.get(col, c);
            for j in (col + 1)..n {
                acc -= m.get(col, j) * x.get(j, c);
            }
            x.set(col, c, acc / m.get(col, col));
        }
    }
    Ok(x)
}
