// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{rope_apply_in_place, KvCache, ModelWeights, Spans};
use crate::error::{Error, Result};
use crate::numerics::{dot, masked_softmax, rms_norm, silu, Matrix};

/// One model input: `[prefix_text][image_patches][query_text]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalInput {
    pub prefix_text: Vec<u32>,
    /// `N x patch_dim`
    pub image_patches: Matrix,
    pub query_text: Vec<u32>,
}

impl MultimodalInput {
    /// An input with at least one image patch.
    pub fn new(prefix_text: Vec<u32>, image_patches: Matrix, query_text: Vec<u32>) -> Result<Self> {
        if image_patches.rows() == 0 {
            return Err(Error::InvalidInput("multimodal input needs at least one patch".into()));
        }
        Ok(Self { prefix_text, image_patches, query_text })
    }

    pub fn image(image_patches: Matrix) -> Result<Self> {
        Self::new(Vec::new(), image_patches, Vec::new())
    }

    /// Text with no image at all, laid out in the query span.
    pub fn text_only(tokens: Vec<u32>) -> Self {
        Self { prefix_text: Vec::new(), image_patches: Matrix::zeros(0, 0), query_text: tokens }
    }

    pub fn spans(&self) -> Spans {
        Spans::new(self.prefix_text.len(), self.image_patches.rows(), self.query_text.len())
    }
}

/// Heads whose image keys are hidden from query-text positions.
///
/// For every target `(layer, kv_head)`, the logits from queries in the
/// query-text span to keys in the image span are blocked before the softmax
/// in all query heads that read that kv head. Text keys stay visible.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnockoutSpec {
    pub targets: BTreeSet<(usize, usize)>,
}

impl KnockoutSpec {
    pub fn new(targets: impl IntoIterator<Item = (usize, usize)>) -> Self {
        Self { targets: targets.into_iter().collect() }
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn blocks(&self, layer: usize, kv_head: usize) -> bool {
        self.targets.contains(&(layer, kv_head))
    }

    pub fn validate(&self, weights: &ModelWeights) -> Result<()> {
        self.targets.iter().try_for_each(|&(l, h)| weights.check_head(l, h))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions<'a> {
    pub knockout: Option<&'a KnockoutSpec>,
    pub record_attention: bool,
}

/// Per-head attention internals of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    n_q_heads: usize,
    seq_len: usize,
    d_head: usize,
    /// `[layer][q_head][query][key]`, zero beyond the causal frontier.
    weights: Vec<f64>,
    /// `[layer][q_head][pos][d_head]`, post-rotary.
    queries: Vec<f64>,
    /// `[layer][q_head][pos][d_head]`, attention output before `wo`.
    outputs: Vec<f64>,
}

impl AttentionRecord {
    fn new(n_layers: usize, n_q_heads: usize, seq_len: usize, d_head: usize) -> Self {
        Self {
            n_q_heads,
            seq_len,
            d_head,
            weights: vec![0.0; n_layers * n_q_heads * seq_len * seq_len],
            queries: vec![0.0; n_layers * n_q_heads * seq_len * d_head],
            outputs: vec![0.0; n_layers * n_q_heads * seq_len * d_head],
        }
    }

    fn slot(&self, layer: usize, q_head: usize, pos: usize) -> usize {
        (layer * self.n_q_heads + q_head) * self.seq_len + pos
    }

    /// Attention weights of `query` over all key positions.
    pub fn weights(&self, layer: usize, q_head: usize, query: usize) -> &[f64] {
        let s = self.slot(layer, q_head, query) * self.seq_len;
        &self.weights[s..s + self.seq_len]
    }

    pub fn query(&self, layer: usize, q_head: usize, pos: usize) -> &[f64] {
        let s = self.slot(layer, q_head, pos) * self.d_head;
        &self.queries[s..s + self.d_head]
    }

    pub fn head_output(&self, layer: usize, q_head: usize, pos: usize) -> &[f64] {
        let s = self.slot(layer, q_head, pos) * self.d_head;
        &self.outputs[s..s + self.d_head]
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `seq x vocab_size`
    pub logits: Matrix,
    /// Residual stream after the last layer, before the final norm.
    pub residual: Matrix,
    pub cache: KvCache,
    pub attention: Option<AttentionRecord>,
}

impl ForwardOutput {
    pub fn final_residual(&self) -> &[f64] {
        self.residual.row(self.residual.rows() - 1)
    }
}

pub fn forward(weights: &ModelWeights, input: &MultimodalInput, knockout: Option<&KnockoutSpec>) -> Result<ForwardOutput> {
    forward_with(weights, input, &ForwardOptions { knockout, record_attention: false })
}

fn embed(weights: &ModelWeights, input: &MultimodalInput) -> Result<Matrix> {
    let cfg = &weights.config;
    let spans = input.spans();
    if spans.is_empty() {
        return Err(Error::InvalidInput("empty input sequence".into()));
    }
    if input.image_patches.rows() > 0 && input.image_patches.cols() != cfg.patch_dim {
        return Err(Error::DimensionMismatch(format!(
            "patches of width {} for patch_dim {}",
            input.image_patches.cols(),
            cfg.patch_dim
        )));
    }
    let mut x = Matrix::zeros(spans.len(), cfg.d_model);
    let token_row = |tok: u32| -> Result<&[f64]> {
        let t = tok as usize;
        if t >= cfg.vocab_size {
            return Err(Error::OutOfRange(format!("token {t} outside vocabulary of {}", cfg.vocab_size)));
        }
        Ok(weights.token_embed.row(t))
    };
    for (pos, &tok) in spans.prefix.clone().zip(&input.prefix_text) {
        x.row_mut(pos).copy_from_slice(token_row(tok)?);
    }
    for (pos, patch) in spans.image.clone().zip(input.image_patches.row_iter()) {
        let e = weights.patch_proj.vec_mul(patch)?;
        x.row_mut(pos).copy_from_slice(&e);
    }
    for (pos, &tok) in spans.query.clone().zip(&input.query_text) {
        x.row_mut(pos).copy_from_slice(token_row(tok)?);
    }
    Ok(x)
}

/// One full-sequence pass with causal grouped-query attention.
///
/// Query head `i` reads kv head `i / group_size`. Keys are rotated before
/// they are cached. A knockout target blocks query-span to image-span
/// logits in that head before the softmax; every other logit is untouched.
pub fn forward_with(weights: &ModelWeights, input: &MultimodalInput, options: &ForwardOptions<'_>) -> Result<ForwardOutput> {
    let cfg = &weights.config;
    if let Some(k) = options.knockout {
        k.validate(weights)?;
    }
    let spans = input.spans();
    let seq = spans.len();
    let dh = cfg.d_head;
    let scale = (dh as f64).sqrt();
    let mut x = embed(weights, input)?;
    let mut cache = KvCache::new(cfg.n_layers, cfg.n_kv_heads, dh, spans.clone());
    let mut record = options
        .record_attention
        .then(|| AttentionRecord::new(cfg.n_layers, cfg.n_q_heads, seq, dh));

    let mut logits_buf = vec![0.0; seq];
    let mut allowed = vec![true; seq];
    for (l, lw) in weights.layers.iter().enumerate() {
        let mut q = Matrix::zeros(seq, cfg.q_width());
        let mut k = Matrix::zeros(seq, cfg.kv_width());
        let mut v = Matrix::zeros(seq, cfg.kv_width());
        for p in 0..seq {
            let h = rms_norm(x.row(p), &lw.attn_norm);
            q.row_mut(p).copy_from_slice(&lw.wq.vec_mul(&h)?);
            let mut kp = lw.wk.vec_mul(&h)?;
            for (kv, b) in kp.iter_mut().zip(&lw.bk) {
                *kv += b;
            }
            k.row_mut(p).copy_from_slice(&kp);
            v.row_mut(p).copy_from_slice(&lw.wv.vec_mul(&h)?);
            for head in q.row_mut(p).chunks_exact_mut(dh) {
                rope_apply_in_place(head, p, cfg.rope_base);
            }
            for head in k.row_mut(p).chunks_exact_mut(dh) {
                rope_apply_in_place(head, p, cfg.rope_base);
            }
            for g in 0..cfg.n_kv_heads {
                let cols = g * dh..(g + 1) * dh;
                cache.append(l, g, &k.row(p)[cols.clone()], &v.row(p)[cols]);
            }
        }

        let mut attn = Matrix::zeros(seq, cfg.q_width());
        for qh in 0..cfg.n_q_heads {
            let g = cfg.kv_head_of(qh);
            let blocked_head = options.knockout.is_some_and(|ks| ks.blocks(l, g));
            let qcols = qh * dh..(qh + 1) * dh;
            for p in 0..seq {
                let qv = &q.row(p)[qcols.clone()];
                let knock_row = blocked_head && spans.query.contains(&p);
                for j in 0..=p {
                    logits_buf[j] = dot(qv, cache.key(l, g, j)) / scale;
                    allowed[j] = !(knock_row && spans.image.contains(&j));
                }
                let w = masked_softmax(&logits_buf[..=p], &allowed[..=p])?;
                let out = &mut attn.row_mut(p)[qcols.clone()];
                for (j, &wj) in w.iter().enumerate() {
                    if wj == 0.0 {
                        continue;
                    }
                    for (o, vv) in out.iter_mut().zip(cache.value(l, g, j)) {
                        *o += wj * vv;
                    }
                }
                if let Some(rec) = record.as_mut() {
                    let s = rec.slot(l, qh, p);
                    rec.weights[s * seq..s * seq + p + 1].copy_from_slice(&w);
                    rec.queries[s * dh..(s + 1) * dh].copy_from_slice(qv);
                    rec.outputs[s * dh..(s + 1) * dh].copy_from_slice(&attn.row(p)[qcols.clone()]);
                }
            }
        }
        for p in 0..seq {
            let o = lw.wo.vec_mul(attn.row(p))?;
            for (xv, ov) in x.row_mut(p).iter_mut().zip(&o) {
                *xv += ov;
            }
            let h = rms_norm(x.row(p), &lw.mlp_norm);
            let mut hidden = lw.w_in.vec_mul(&h)?;
            hidden.iter_mut().for_each(|u| *u = silu(*u));
            let m = lw.w_out.vec_mul(&hidden)?;
            for (xv, mv) in x.row_mut(p).iter_mut().zip(&m) {
                *xv += mv;
            }
        }
    }

    let mut logits = Matrix::zeros(seq, cfg.vocab_size);
    for p in 0..seq {
        let h = rms_norm(x.row(p), &weights.final_norm);
        logits.row_mut(p).copy_from_slice(&weights.unembed.vec_mul(&h)?);
    }
    Ok(ForwardOutput { logits, residual: x, cache, attention: record })
}
