// SPDX-License-Identifier: MIT OR Apache-2.0

//! Segmentation and correspondence metrics on the patch grid.

use crate::error::{Error, Result};

/// PCK distance factor.
pub const PCK_ALPHA: f64 = 0.1;

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!("masks of length {a} and {b}")));
    }
    Ok(())
}

/// Intersection over union; two empty masks score 1.
pub fn iou(pred: &[bool], gt: &[bool]) -> Result<f64> {
    check_len(pred.len(), gt.len())?;
    let inter = pred.iter().zip(gt).filter(|(p, g)| **p && **g).count();
    let union = pred.iter().zip(gt).filter(|(p, g)| **p || **g).count();
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Whether a predicted patch lies within `alpha * max(h, w)` patches of the
/// true one. Exactly at the threshold counts as correct.
pub fn pck_hit(pred: (usize, usize), truth: (usize, usize), grid_h: usize, grid_w: usize, alpha: f64) -> bool {
    let dr = pred.0 as f64 - truth.0 as f64;
    let dc = pred.1 as f64 - truth.1 as f64;
    (dr * dr + dc * dc).sqrt() <= alpha * grid_h.max(grid_w) as f64
}

/// Fraction of keypoints hit; no keypoints scores 1.
pub fn pck(pairs: &[((usize, usize), (usize, usize))], grid_h: usize, grid_w: usize, alpha: f64) -> f64 {
    if pairs.is_empty() {
        return 1.0;
    }
    let hits = pairs.iter().filter(|(p, t)| pck_hit(*p, *t, grid_h, grid_w, alpha)).count();
    hits as f64 / pairs.len() as f64
}

/// Mask patches with a 4-neighbour outside the mask; off-grid counts as outside.
pub fn boundary(mask: &[bool], grid_h: usize, grid_w: usize) -> Vec<bool> {
    let at = |r: isize, c: isize| -> bool {
        r >= 0 && c >= 0 && (r as usize) < grid_h && (c as usize) < grid_w && mask[r as usize * grid_w + c as usize]
    };
    (0..grid_h * grid_w)
        .map(|i| {
            let (r, c) = ((i / grid_w) as isize, (i % grid_w) as isize);
            mask[i] && [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)].iter().any(|&(rr, cc)| !at(rr, cc))
        })
        .collect()
}

/// Boundary F1 with a tolerance of one patch (the cell itself or a 4-neighbour).
/// Two empty masks score 1; one empty boundary scores 0.
pub fn boundary_f(pred: &[bool], gt: &[bool], grid_h: usize, grid_w: usize) -> Result<f64> {
    check_len(pred.len(), gt.len())?;
    check_len(pred.len(), grid_h * grid_w)?;
    let bp = boundary(pred, grid_h, grid_w);
    let bg = boundary(gt, grid_h, grid_w);
    let (np, ng) = (bp.iter().filter(|&&b| b).count(), bg.iter().filter(|&&b| b).count());
    if np == 0 && ng == 0 {
        return Ok(1.0);
    }
    if np == 0 || ng == 0 {
        return Ok(0.0);
    }
    let matched = |from: &[bool], to: &[bool]| -> usize {
        (0..from.len())
            .filter(|&i| from[i])
            .filter(|&i| {
                let (r, c) = ((i / grid_w) as isize, (i % grid_w) as isize);
                [(r, c), (r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)].iter().any(|&(rr, cc)| {
                    rr >= 0
                        && cc >= 0
                        && (rr as usize) < grid_h
                        && (cc as usize) < grid_w
                        && to[rr as usize * grid_w + cc as usize]
                })
            })
            .count()
    };
    let precision = matched(&bp, &bg) as f64 / np as f64;
    let recall = matched(&bg, &bp) as f64 / ng as f64;
    Ok(if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) })
}

/// Region Jaccard and boundary F, plus their mean.
pub fn j_and_f(pred: &[bool], gt: &[bool], grid_h: usize, grid_w: usize) -> Result<(f64, f64, f64)> {
    let j = iou(pred, gt)?;
    let f = boundary_f(pred, gt, grid_h, grid_w)?;
    Ok((j, f, (j + f) / 2.0))
}

/// Otsu split of 1-D scores.
///
/// Returns the largest score of the low class; the foreground is every
/// score strictly above it. When all scores are equal there is no split and
/// `None` is returned, meaning everything is foreground. Ties in the
/// objective keep the lowest threshold.
pub fn otsu_threshold(scores: &[f64]) -> Option<f64> {
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let total: f64 = sorted.iter().sum();
    let mut best: Option<(f64, f64)> = None;
    let mut low_sum = 0.0;
    for i in 0..n.saturating_sub(1) {
        low_sum += sorted[i];
        if sorted[i] == sorted[i + 1] {
            continue;
        }
        let n0 = (i + 1) as f64;
        let n1 = (n - i - 1) as f64;
        let m0 = low_sum / n0;
        let m1 = (total - low_sum) / n1;
        let between = n0 * n1 * (m0 - m1) * (m0 - m1);
        if best.is_none_or(|(b, _)| between > b) {
            best = Some((between, sorted[i]));
        }
    }
    best.map(|(_, t)| t)
}

/// Foreground mask from scores by Otsu's rule.
pub fn otsu_segment(scores: &[f64]) -> Vec<bool> {
    match otsu_threshold(scores) {
        Some(t) => scores.iter().map(|&s| s > t).collect(),
        None => vec![true; scores.len()],
    }
}
