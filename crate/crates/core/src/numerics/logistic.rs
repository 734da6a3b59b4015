// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::{dot, sigmoid, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub step: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self { step: 0.1, epochs: 500, l2: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Loss before training followed by the loss after every accepted step.
    pub training_loss_trace: Vec<f64>,
}

impl LogisticModel {
    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(dot(&self.weights, x) + self.bias)
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.probability(x) > 0.5
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean log loss plus `l2 / 2 * |w|^2`.
pub fn log_loss(features: &Matrix, labels: &[bool], weights: &[f64], bias: f64, l2: f64) -> f64 {
    let n = features.rows() as f64;
    let data: f64 = features
        .row_iter()
        .zip(labels)
        .map(|(x, &y)| {
            let z = dot(weights, x) + bias;
            softplus(z) - if y { z } else { 0.0 }
        })
        .sum();
    data / n + 0.5 * l2 * dot(weights, weights)
}

/// Analytic gradient of [`log_loss`]: `(dL/dw, dL/db)`.
pub fn log_loss_gradient(
    features: &Matrix,
    labels: &[bool],
    weights: &[f64],
    bias: f64,
    l2: f64,
) -> (Vec<f64>, f64) {
    let n = features.rows() as f64;
    let mut gw = vec![0.0; weights.len()];
    let mut gb = 0.0;
    for (x, &y) in features.row_iter().zip(labels) {
        let r = sigmoid(dot(weights, x) + bias) - if y { 1.0 } else { 0.0 };
        for (g, v) in gw.iter_mut().zip(x) {
            *g += r * v;
        }
        gb += r;
    }
    for (g, w) in gw.iter_mut().zip(weights) {
        *g = *g / n + l2 * w;
    }
    (gw, gb / n)
}

/// Full-batch gradient descent on the L2-regularised log loss.
///
/// A step that would raise the loss is rejected and retried at half the
/// step size, so the recorded trace never increases.
pub fn logistic_fit(features: &Matrix, labels: &[bool], config: &LogisticConfig) -> Result<LogisticModel> {
    if features.rows() == 0 {
        return Err(Error::InvalidInput("logistic fit on zero rows".into()));
    }
    if labels.len() != features.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            features.rows()
        )));
    }
    if !features.is_finite() {
        return Err(Error::InvalidInput("non-finite features".into()));
    }
    let d = features.cols();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut loss = log_loss(features, labels, &w, b, config.l2);
    let mut trace = vec![loss];
    let mut step = config.step;
    'epochs: for _ in 0..config.epochs {
        let (gw, gb) = log_loss_gradient(features, labels, &w, b, config.l2);
        for _ in 0..40 {
            let cand_w: Vec<f64> = w.iter().zip(&gw).map(|(wi, gi)| wi - step * gi).collect();
            let cand_b = b - step * gb;
            let cand = log_loss(features, labels, &cand_w, cand_b, config.l2);
            if cand <= loss {
                w = cand_w;
                b = cand_b;
                loss = cand;
                trace.push(loss);
                continue 'epochs;
            }
            step *= 0.5;
        }
        break;
    }
    Ok(LogisticModel { weights: w, bias: b, training_loss_trace: trace })
}
