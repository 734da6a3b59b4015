// SPDX-License-Identifier: MIT OR Apache-2.0

//! Key variance across scenes, agnostic/dependent head labels and PCA export.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward, KvCache, ModelWeights, MultimodalInput};
use crate::numerics::{pca_fit, pca_project, squared_distance, Matrix};
use crate::synth::SyntheticScene;

/// Histogram bins for the bimodal split.
pub const KDE_BINS: usize = 64;
/// Kernel bandwidth as a fraction of the data range.
pub const KDE_BANDWIDTH_FRACTION: f64 = 1.0 / 16.0;

/// Per-head variance of image keys across scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceMap {
    pub n_layers: usize,
    pub n_kv_heads: usize,
    pub n_scenes: usize,
    /// Layer-major.
    pub variance: Vec<f64>,
}

impl VarianceMap {
    pub fn get(&self, layer: usize, kv_head: usize) -> f64 {
        self.variance[layer * self.n_kv_heads + kv_head]
    }

    pub fn cells(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.variance.iter().enumerate().map(|(i, &v)| ((i / self.n_kv_heads, i % self.n_kv_heads), v))
    }
}

/// Trace variance across scenes at each position, averaged over positions.
///
/// `keys[s]` is scene `s`'s `N x d` key matrix. Two passes: the per-position
/// mean first, then mean squared distances to it.
pub fn key_variance(keys: &[&Matrix]) -> Result<f64> {
    let Some(first) = keys.first() else {
        return Err(Error::InvalidInput("no scenes".into()));
    };
    let (n, d) = (first.rows(), first.cols());
    if keys.iter().any(|k| k.rows() != n || k.cols() != d) {
        return Err(Error::DimensionMismatch("key matrices differ in shape".into()));
    }
    if n == 0 {
        return Err(Error::InvalidInput("no image positions".into()));
    }
    let s = keys.len() as f64;
    let mut total = 0.0;
    let mut mean = vec![0.0; d];
    for p in 0..n {
        mean.fill(0.0);
        for k in keys {
            for (m, v) in mean.iter_mut().zip(k.row(p)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= s);
        total += keys.iter().map(|k| squared_distance(k.row(p), &mean)).sum::<f64>() / s;
    }
    Ok(total / n as f64)
}

fn image_caches(weights: &ModelWeights, scenes: &[SyntheticScene]) -> Result<Vec<KvCache>> {
    scenes
        .par_iter()
        .map(|s| Ok(forward(weights, &MultimodalInput::image(s.patches.clone())?, None)?.cache))
        .collect()
}

fn check_grids(scenes: &[SyntheticScene]) -> Result<()> {
    let Some(first) = scenes.first() else {
        return Err(Error::InvalidInput("no scenes".into()));
    };
    if scenes.iter().any(|s| (s.grid_h, s.grid_w) != (first.grid_h, first.grid_w)) {
        return Err(Error::DimensionMismatch("scenes have different grids".into()));
    }
    Ok(())
}

pub fn variance_map(weights: &ModelWeights, scenes: &[SyntheticScene]) -> Result<VarianceMap> {
    if scenes.len() < 2 {
        return Err(Error::InvalidInput("variance needs at least two scenes".into()));
    }
    check_grids(scenes)?;
    let caches = image_caches(weights, scenes)?;
    let cfg = &weights.config;
    let cells: Vec<(usize, usize)> = (0..cfg.n_layers).flat_map(|l| (0..cfg.n_kv_heads).map(move |h| (l, h))).collect();
    let variance = cells
        .par_iter()
        .map(|&(l, h)| {
            let keys: Vec<Matrix> = caches.iter().map(|c| c.image_kv(l, h).map(|kv| kv.keys)).collect::<Result<_>>()?;
            let refs: Vec<&Matrix> = keys.iter().collect();
            key_variance(&refs)
        })
        .collect::<Result<_>>()?;
    Ok(VarianceMap { n_layers: cfg.n_layers, n_kv_heads: cfg.n_kv_heads, n_scenes: scenes.len(), variance })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BimodalSplit {
    Split { threshold: f64, modes: (f64, f64) },
    NoSplit,
}

/// Smoothed-histogram density at the bin centres.
fn smoothed_histogram(values: &[f64], lo: f64, range: f64) -> (Vec<f64>, Vec<f64>) {
    let width = range / KDE_BINS as f64;
    let centers: Vec<f64> = (0..KDE_BINS).map(|i| lo + (i as f64 + 0.5) * width).collect();
    let mut counts = vec![0.0; KDE_BINS];
    for &v in values {
        let i = (((v - lo) / width) as usize).min(KDE_BINS - 1);
        counts[i] += 1.0;
    }
    let bw = range * KDE_BANDWIDTH_FRACTION;
    let density = centers
        .iter()
        .map(|&c| {
            centers
                .iter()
                .zip(&counts)
                .map(|(&cj, &n)| n * (-(c - cj) * (c - cj) / (2.0 * bw * bw)).exp())
                .sum()
        })
        .collect();
    (centers, density)
}

/// Splits a sample at the density minimum between its two highest modes.
///
/// The density is a 64-bin histogram over the data range smoothed by a
/// Gaussian of bandwidth range/16. Local maxima include the end bins. With
/// fewer than two maxima, or no spread at all, the result is
/// [`BimodalSplit::NoSplit`].
pub fn bimodal_threshold(values: &[f64]) -> Result<BimodalSplit> {
    if values.len() < 4 {
        return Err(Error::InvalidInput(format!("bimodal split needs at least 4 values, got {}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range <= 0.0 {
        return Ok(BimodalSplit::NoSplit);
    }
    let (centers, d) = smoothed_histogram(values, lo, range);
    let last = KDE_BINS - 1;
    let mut maxima: Vec<usize> =
        (0..KDE_BINS).filter(|&i| (i == 0 || d[i] > d[i - 1]) && (i == last || d[i] >= d[i + 1])).collect();
    if maxima.len() < 2 {
        return Ok(BimodalSplit::NoSplit);
    }
    // highest first, lower index on ties
    maxima.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));
    let (a, b) = (maxima[0].min(maxima[1]), maxima[0].max(maxima[1]));
    let mut low = a + 1;
    for i in a + 1..b {
        if d[i] < d[low] {
            low = i;
        }
    }
    Ok(BimodalSplit::Split { threshold: centers[low], modes: (centers[a], centers[b]) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyLabel {
    Agnostic,
    Dependent,
}

impl KeyLabel {
    pub fn name(self) -> &'static str {
        match self {
            KeyLabel::Agnostic => "agnostic",
            KeyLabel::Dependent => "dependent",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerGroup {
    Early,
    Middle,
    Late,
}

impl LayerGroup {
    pub const ALL: [LayerGroup; 3] = [LayerGroup::Early, LayerGroup::Middle, LayerGroup::Late];

    pub fn name(self) -> &'static str {
        match self {
            LayerGroup::Early => "early",
            LayerGroup::Middle => "middle",
            LayerGroup::Late => "late",
        }
    }
}

/// Early is the first `n/3` layers (rounded down), late the last `n/3`, middle the rest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerGroups {
    pub early: Range<usize>,
    pub middle: Range<usize>,
    pub late: Range<usize>,
}

impl LayerGroups {
    pub fn thirds(n_layers: usize) -> Self {
        let t = n_layers / 3;
        Self { early: 0..t, middle: t..n_layers - t, late: n_layers - t..n_layers }
    }

    pub fn range(&self, group: LayerGroup) -> Range<usize> {
        match group {
            LayerGroup::Early => self.early.clone(),
            LayerGroup::Middle => self.middle.clone(),
            LayerGroup::Late => self.late.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdSource {
    Manual,
    Bimodal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyClassification {
    pub threshold: f64,
    pub source: ThresholdSource,
    pub n_layers: usize,
    pub n_kv_heads: usize,
    /// Layer-major.
    pub labels: Vec<KeyLabel>,
    pub layer_groups: LayerGroups,
}

impl KeyClassification {
    pub fn label(&self, layer: usize, kv_head: usize) -> KeyLabel {
        self.labels[layer * self.n_kv_heads + kv_head]
    }

    /// Heads with `label` in the layers of `group`, in layer-major order.
    pub fn heads(&self, group: LayerGroup, label: KeyLabel) -> Vec<(usize, usize)> {
        self.layer_groups
            .range(group)
            .flat_map(|l| (0..self.n_kv_heads).map(move |h| (l, h)))
            .filter(|&(l, h)| self.label(l, h) == label)
            .collect()
    }

    pub fn agnostic_set(&self) -> BTreeSet<(usize, usize)> {
        LayerGroup::ALL.iter().flat_map(|&g| self.heads(g, KeyLabel::Agnostic)).collect()
    }
}

/// Labels a head agnostic iff its variance is below the threshold. Without a
/// manual threshold the bimodal split is used.
pub fn classify_keys(vmap: &VarianceMap, threshold: Option<f64>) -> Result<KeyClassification> {
    let (threshold, source) = match threshold {
        Some(t) if t.is_finite() => (t, ThresholdSource::Manual),
        Some(t) => return Err(Error::InvalidInput(format!("threshold {t} is not finite"))),
        None => match bimodal_threshold(&vmap.variance)? {
            BimodalSplit::Split { threshold, .. } => (threshold, ThresholdSource::Bimodal),
            BimodalSplit::NoSplit => {
                return Err(Error::ClassificationUnavailable(
                    "variances show no bimodal split and no manual threshold was given".into(),
                ))
            }
        },
    };
    let labels = vmap
        .variance
        .iter()
        .map(|&v| if v < threshold { KeyLabel::Agnostic } else { KeyLabel::Dependent })
        .collect();
    Ok(KeyClassification {
        threshold,
        source,
        n_layers: vmap.n_layers,
        n_kv_heads: vmap.n_kv_heads,
        labels,
        layer_groups: LayerGroups::thirds(vmap.n_layers),
    })
}

/// PCA of the pooled image keys of all scenes at one head; each scene's keys
/// projected on the top `k` components and min-max scaled to `[0, 1]` per
/// component over all scenes. A component with no spread maps to 0.
pub fn export_key_pca(
    weights: &ModelWeights,
    scenes: &[SyntheticScene],
    layer: usize,
    kv_head: usize,
    k: usize,
) -> Result<Vec<Matrix>> {
    weights.check_head(layer, kv_head)?;
    check_grids(scenes)?;
    let caches = image_caches(weights, scenes)?;
    let keys: Vec<Matrix> = caches.iter().map(|c| c.image_kv(layer, kv_head).map(|kv| kv.keys)).collect::<Result<_>>()?;
    let refs: Vec<&Matrix> = keys.iter().collect();
    pca_coordinates(&refs, k)
}

/// Value-level form of [`export_key_pca`].
pub fn pca_coordinates(keys: &[&Matrix], k: usize) -> Result<Vec<Matrix>> {
    let pooled = Matrix::vstack(keys)?;
    let model = pca_fit(&pooled, k)?;
    let mut projected: Vec<Matrix> = keys.iter().map(|m| pca_project(&model, m)).collect::<Result<_>>()?;
    for c in 0..k {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for m in &projected {
            for r in m.row_iter() {
                lo = lo.min(r[c]);
                hi = hi.max(r[c]);
            }
        }
        let span = hi - lo;
        for m in projected.iter_mut() {
            for r in 0..m.rows() {
                let v = if span > 0.0 { (m.get(r, c) - lo) / span } else { 0.0 };
                m.set(r, c, v);
            }
        }
    }
    Ok(projected)
}

/// CSV with columns `layer,kv_head,variance,label`; the label is empty
/// without a classification.
pub fn variance_csv(vmap: &VarianceMap, classification: Option<&KeyClassification>) -> String {
    let mut out = String::from("layer,kv_head,variance,label\n");
    for ((l, h), v) in vmap.cells() {
        let label = classification.map_or("", |c| c.label(l, h).name());
        let _ = writeln!(out, "{l},{h},{v},{label}");
    }
    out
}

/// CSV with columns `scene_id,position,row,col,c1,...,ck`.
pub fn pca_csv(coords: &[Matrix], grid_w: usize) -> String {
    let k = coords.first().map_or(0, Matrix::cols);
    let mut out = String::from("scene_id,position,row,col");
    for c in 1..=k {
        let _ = write!(out, ",c{c}");
    }
    out.push('\n');
    for (s, m) in coords.iter().enumerate() {
        for (p, r) in m.row_iter().enumerate() {
            let _ = write!(out, "{s},{p},{},{}", p / grid_w, p % grid_w);
            for v in r {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests;
