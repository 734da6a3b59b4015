// SPDX-License-Identifier: MIT OR Apache-2.0

//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use kvlens::model::{build_model, ModelConfig, ModelWeights, MultimodalInput};
use kvlens::numerics::Matrix;
use kvlens::seed;
use kvlens::synth::{EpisodeSizes, Palette, SceneSpec, Shape};
use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use rand::Rng;

pub fn na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

/// Random weights with query and key projections scaled up so attention is
/// far from uniform.
pub fn peaky_model(config: &ModelConfig) -> ModelWeights {
    let mut w = build_model(config, None).unwrap();
    for lw in w.layers.iter_mut() {
        lw.wq.scale(25.0);
        lw.wk.scale(25.0);
        for (i, b) in lw.bk.iter_mut().enumerate() {
            *b = 0.3 * ((i as f64) * 0.7).sin();
        }
    }
    w
}

pub fn random_input(rng: &mut impl Rng, cfg: &ModelConfig, n_prefix: usize, n_image: usize, n_query: usize) -> MultimodalInput {
    let tok = |rng: &mut dyn rand::RngCore| rng.random_range(0..cfg.vocab_size as u32);
    let prefix: Vec<u32> = (0..n_prefix).map(|_| tok(rng)).collect();
    let query: Vec<u32> = (0..n_query).map(|_| tok(rng)).collect();
    let data: Vec<f64> = (0..n_image * cfg.patch_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    MultimodalInput::new(prefix, Matrix::new(n_image, cfg.patch_dim, data).unwrap(), query).unwrap()
}

fn rope_ref(v: &mut [f64], pos: usize, base: f64) {
    let d = v.len();
    for i in 0..d / 2 {
        let freq = 1.0 / base.powf((2 * i) as f64 / d as f64);
        let z = Complex::new(v[2 * i], v[2 * i + 1]) * Complex::from_polar(1.0, pos as f64 * freq);
        v[2 * i] = z.re;
        v[2 * i + 1] = z.im;
    }
}

fn rms_ref(x: &DVector<f64>, gain: &[f64]) -> DVector<f64> {
    let ms = x.norm_squared() / x.len() as f64;
    let s = 1.0 / (ms + 1e-6).sqrt();
    DVector::from_iterator(x.len(), x.iter().zip(gain).map(|(v, g)| v * s * g))
}

/// Output of [`reference_forward`].
pub struct RefForward {
    /// `[layer][q_head][pos]` -> attention output of that head, before `wo`.
    pub head_out: Vec<Vec<Vec<Vec<f64>>>>,
    /// `[layer][q_head][pos]` -> weights over the positions it may see.
    pub attn: Vec<Vec<Vec<Vec<f64>>>>,
    /// `[layer][kv_head][pos]` -> rotated key.
    pub keys: Vec<Vec<Vec<Vec<f64>>>>,
    pub values: Vec<Vec<Vec<Vec<f64>>>>,
    pub logits: DMatrix<f64>,
}

/// Multi-head attention with every query head given its own explicit copy
/// of the shared key and value projections. Knockout is done by deleting
/// the image keys from the blocked rows, not by masking.
pub fn reference_forward(w: &ModelWeights, input: &MultimodalInput, knockout: &BTreeSet<(usize, usize)>) -> RefForward {
    let cfg = &w.config;
    let (np, ni, nq) = (input.prefix_text.len(), input.image_patches.rows(), input.query_text.len());
    let seq = np + ni + nq;
    let image = np..np + ni;
    let query = np + ni..seq;
    let dh = cfg.d_head;
    let group = cfg.n_q_heads / cfg.n_kv_heads;

    let emb = na(&w.token_embed);
    let proj = na(&w.patch_proj);
    let mut x: Vec<DVector<f64>> = Vec::with_capacity(seq);
    for &t in &input.prefix_text {
        x.push(emb.row(t as usize).transpose());
    }
    for p in 0..ni {
        let patch = DVector::from_row_slice(input.image_patches.row(p));
        x.push(proj.transpose() * patch);
    }
    for &t in &input.query_text {
        x.push(emb.row(t as usize).transpose());
    }

    let mut out = RefForward {
        head_out: Vec::new(),
        attn: Vec::new(),
        keys: Vec::new(),
        values: Vec::new(),
        logits: DMatrix::zeros(0, 0),
    };
    for (l, lw) in w.layers.iter().enumerate() {
        let (wq, wk, wv, wo) = (na(&lw.wq), na(&lw.wk), na(&lw.wv), na(&lw.wo));
        let h: Vec<DVector<f64>> = x.iter().map(|v| rms_ref(v, &lw.attn_norm)).collect();
        let mut layer_heads = vec![vec![vec![0.0; dh]; seq]; cfg.n_q_heads];
        let mut layer_attn = vec![vec![Vec::new(); seq]; cfg.n_q_heads];
        let mut layer_keys = vec![vec![Vec::new(); seq]; cfg.n_kv_heads];
        let mut layer_vals = vec![vec![Vec::new(); seq]; cfg.n_kv_heads];
        for qh in 0..cfg.n_q_heads {
            let g = qh / group;
            // duplicated copies of the shared projections
            let wk_copy = wk.columns(g * dh, dh).into_owned();
            let wv_copy = wv.columns(g * dh, dh).into_owned();
            let wq_h = wq.columns(qh * dh, dh).into_owned();
            let bias = DVector::from_row_slice(&lw.bk[g * dh..(g + 1) * dh]);
            let mut k: Vec<Vec<f64>> = Vec::with_capacity(seq);
            let mut v: Vec<Vec<f64>> = Vec::with_capacity(seq);
            let mut q: Vec<Vec<f64>> = Vec::with_capacity(seq);
            for (p, hp) in h.iter().enumerate() {
                let mut kp: Vec<f64> = (wk_copy.transpose() * hp + &bias).iter().copied().collect();
                rope_ref(&mut kp, p, cfg.rope_base);
                let mut qp: Vec<f64> = (wq_h.transpose() * hp).iter().copied().collect();
                rope_ref(&mut qp, p, cfg.rope_base);
                k.push(kp);
                q.push(qp);
                v.push((wv_copy.transpose() * hp).iter().copied().collect());
            }
            let blocked = knockout.contains(&(l, g));
            for p in 0..seq {
                let visible: Vec<usize> =
                    (0..=p).filter(|j| !(blocked && query.contains(&p) && image.contains(j))).collect();
                let logits: Vec<f64> = visible
                    .iter()
                    .map(|&j| q[p].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
                let s: f64 = e.iter().sum();
                let mut full = vec![0.0; p + 1];
                for (&j, ej) in visible.iter().zip(&e) {
                    full[j] = ej / s;
                    for (o, vv) in layer_heads[qh][p].iter_mut().zip(&v[j]) {
                        *o += ej / s * vv;
                    }
                }
                layer_attn[qh][p] = full;
            }
            if qh % group == 0 {
                layer_keys[g] = k;
                layer_vals[g] = v;
            }
        }
        for p in 0..seq {
            let concat = DVector::from_iterator(cfg.n_q_heads * dh, (0..cfg.n_q_heads).flat_map(|qh| layer_heads[qh][p].clone()));
            x[p] += wo.transpose() * concat;
            let h2 = rms_ref(&x[p], &lw.mlp_norm);
            let hidden = (na(&lw.w_in).transpose() * h2).map(|u| u / (1.0 + (-u).exp()));
            x[p] += na(&lw.w_out).transpose() * hidden;
        }
        out.head_out.push(layer_heads);
        out.attn.push(layer_attn);
        out.keys.push(layer_keys);
        out.values.push(layer_vals);
    }
    let un = na(&w.unembed);
    let mut logits = DMatrix::zeros(seq, cfg.vocab_size);
    for p in 0..seq {
        let row = un.transpose() * rms_ref(&x[p], &w.final_norm);
        logits.set_row(p, &row.transpose());
    }
    out.logits = logits;
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Eigenpairs of the sample covariance, largest first.
pub fn reference_pca(data: &Matrix) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = na(data);
    let mean = m.row_mean();
    let mut c = m.clone();
    for mut row in c.row_iter_mut() {
        row -= &mean;
    }
    let cov = (c.transpose() * &c) / (data.rows() as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order.iter().map(|&i| eig.eigenvectors.column(i).iter().copied().collect()).collect();
    (values, vectors)
}

/// Exhaustive 1-D two-class split minimising within-class squared error;
/// returns the low-class membership.
pub fn brute_split(values: &[f64]) -> Vec<bool> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let sse = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>()
    };
    let mut best = (f64::INFINITY, sorted[0]);
    for i in 1..sorted.len() {
        let cost = sse(&sorted[..i]) + sse(&sorted[i..]);
        if cost < best.0 {
            best = (cost, sorted[i - 1]);
        }
    }
    values.iter().map(|&v| v <= best.1).collect()
}

/// `n` two-population samples with well separated means.
pub fn bimodal_draws(n: usize, seed_value: u64) -> Vec<Vec<f64>> {
    use rand_distr::{Distribution, Normal};
    let mut rng = seed::rng(seed_value);
    (0..n)
        .map(|_| {
            let a = Normal::new(rng.random_range(0.0..10.0), 1.0).unwrap();
            let gap = rng.random_range(12.0..30.0);
            let b = Normal::new(a.mean() + gap, 1.0).unwrap();
            let (na_, nb) = (rng.random_range(8..30), rng.random_range(8..30));
            let mut v: Vec<f64> = (0..na_).map(|_| a.sample(&mut rng)).collect();
            v.extend((0..nb).map(|_| b.sample(&mut rng)));
            v
        })
        .collect()
}

/// Minimum 2-means inertia over every bipartition.
pub fn brute_two_means(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    for mask in 1..(1u32 << n) - 1 {
        let mut cost = 0.0;
        for side in [true, false] {
            let members: Vec<&Vec<f64>> = (0..n).filter(|&i| ((mask >> i) & 1 == 1) == side).map(|i| &points[i]).collect();
            let d = members[0].len();
            let centre: Vec<f64> = (0..d).map(|c| members.iter().map(|p| p[c]).sum::<f64>() / members.len() as f64).collect();
            cost += members.iter().map(|p| p.iter().zip(&centre).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).sum::<f64>();
        }
        best = best.min(cost);
    }
    best
}

/// Boundary F by enumeration: a boundary cell is matched when some boundary
/// cell of the other mask lies within Manhattan distance 1.
pub fn boundary_f_oracle(pred: &[bool], gt: &[bool], h: usize, w: usize) -> f64 {
    let inside = |m: &[bool], r: i64, c: i64| r >= 0 && c >= 0 && r < h as i64 && c < w as i64 && m[(r as usize) * w + c as usize];
    let edge = |m: &[bool]| -> Vec<(i64, i64)> {
        let mut out = Vec::new();
        for r in 0..h as i64 {
            for c in 0..w as i64 {
                if inside(m, r, c) && [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|(dr, dc)| !inside(m, r + dr, c + dc)) {
                    out.push((r, c));
                }
            }
        }
        out
    };
    let (bp, bg) = (edge(pred), edge(gt));
    if bp.is_empty() && bg.is_empty() {
        return 1.0;
    }
    if bp.is_empty() || bg.is_empty() {
        return 0.0;
    }
    let hit = |a: &(i64, i64), set: &[(i64, i64)]| set.iter().any(|b| (a.0 - b.0).abs() + (a.1 - b.1).abs() <= 1);
    let p = bp.iter().filter(|a| hit(a, &bg)).count() as f64 / bp.len() as f64;
    let r = bg.iter().filter(|a| hit(a, &bp)).count() as f64 / bg.len() as f64;
    if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) }
}

/// Grid mask from a list of `(row, col)` cells.
pub fn cells(h: usize, w: usize, list: &[(usize, usize)]) -> Vec<bool> {
    let mut m = vec![false; h * w];
    for &(r, c) in list {
        m[r * w + c] = true;
    }
    m
}

/// Two shapes, each with its own colour: square red, bar blue.
pub fn two_class_sizes() -> EpisodeSizes {
    let scene = SceneSpec { shapes: vec![Shape::Square, Shape::Bar], palette: Palette::ByShape, ..SceneSpec::default() };
    EpisodeSizes { scene, ..EpisodeSizes::default() }
}
