// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense f64 linear algebra and the small classical-ML kernels the probes
//! and analyses are built on.

mod eigen;
mod kmeans;
mod logistic;
mod matrix;
mod pca;

pub use eigen::{solve, symmetric_eigen, SymmetricEigen};
pub use kmeans::{kmeans, KMeansResult, KMEANS_MAX_ITERS};
pub use logistic::{log_loss, log_loss_gradient, logistic_fit, LogisticConfig, LogisticModel};
pub use matrix::Matrix;
pub use pca::{pca_fit, pca_project, PcaModel};

use crate::error::{Error, Result};

/// Epsilon inside the RMS-norm square root.
pub const RMS_EPS: f64 = 1e-6;

/// Softmax over the allowed positions of `logits`.
///
/// `allowed[i] == false` behaves like an additive `-inf` logit: that entry
/// comes out exactly 0 and the remaining entries are renormalised. The
/// arithmetic only ever touches allowed entries, so the result is identical
/// to a softmax over the allowed subset alone.
pub fn masked_softmax(logits: &[f64], allowed: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != allowed.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} logits vs {} mask entries",
            logits.len(),
            allowed.len()
        )));
    }
    let max = logits
        .iter()
        .zip(allowed)
        .filter(|(_, &ok)| ok)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateMask);
    }
    let mut out = vec![0.0; logits.len()];
    let mut sum = 0.0;
    for ((o, &l), &ok) in out.iter_mut().zip(logits).zip(allowed) {
        if ok {
            *o = (l - max).exp();
            sum += *o;
        }
    }
    for (o, &ok) in out.iter_mut().zip(allowed) {
        if ok {
            *o /= sum;
        }
    }
    Ok(out)
}

/// Plain softmax (every position allowed).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let allowed = vec![true; logits.len()];
    masked_softmax(logits, &allowed).unwrap_or_default()
}

/// `gain_i * x_i / sqrt(mean(x^2) + eps)`.
pub fn rms_norm(x: &[f64], gain: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.len(), gain.len());
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + RMS_EPS).sqrt();
    x.iter().zip(gain).map(|(v, g)| g * v * inv).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; `None` when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some(dot(a, b) / (na * nb))
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `x * sigmoid(x)`.
pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
