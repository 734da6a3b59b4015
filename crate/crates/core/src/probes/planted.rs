// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::error::{Error, Result};
use crate::model::{build_model, ModelConfig, ModelWeights};
use crate::numerics::{solve, Matrix};
use crate::synth::{pixel_projection, token_id, Color, Shape, PATCH_PIXELS};

/// Heads wired by [`planted_probe_model`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeHeads {
    /// Values are the patch's mean colour; shape words map to their colour.
    pub color: (usize, usize),
    /// Untouched random value head over the raw pixels. It keeps the
    /// within-object shading, so it solves correspondence.
    pub appearance: (usize, usize),
}

pub const PROBE_HEADS: ProbeHeads = ProbeHeads { color: (0, 0), appearance: (0, 1) };

const CHANNELS: usize = 3;
const RAW_LEN: usize = PATCH_PIXELS * PATCH_PIXELS * CHANNELS;
/// First residual dimension used for shape-word markers.
pub(crate) const MARKER_BASE: usize = RAW_LEN;

fn channel_of(color: Color) -> usize {
    match color {
        Color::Red => 0,
        Color::Green => 1,
        Color::Blue => 2,
        _ => unreachable!("shape colours are primaries"),
    }
}

/// A model whose layer-0 residual carries the raw patch pixels, with a
/// colour-reading value head and shape words that point at their colour.
///
/// The patch embedding inverts the fixed pixel projection so the image
/// residual is `[pixels, 0, ...]`. Shape word `k` embeds as a one-hot at
/// `48 + k`. In the colour head the value of a patch is its mean colour
/// (after the RMS norm) and the value of a shape word is `3 e_c - 1`, where
/// `c` is the channel of that shape's canonical colour.
pub fn planted_probe_model(config: &ModelConfig) -> Result<ModelWeights> {
    if config.patch_dim != RAW_LEN {
        return Err(Error::Config(format!("planted probe model needs patch_dim {RAW_LEN}")));
    }
    if config.d_model < RAW_LEN + Shape::ALL.len() || config.n_kv_heads < 2 || config.d_head < CHANNELS {
        return Err(Error::Config("planted probe model needs d_model >= 51, two kv heads and d_head >= 3".into()));
    }
    let mut w = build_model(config, None)?;
    let d = config.d_model;

    let mut lift = Matrix::zeros(RAW_LEN, d);
    for i in 0..RAW_LEN {
        lift.set(i, i, 1.0);
    }
    w.patch_proj = solve(&pixel_projection(config.patch_dim), &lift)?;

    for (k, &shape) in Shape::ALL.iter().enumerate() {
        let tok = token_id(shape.word()).expect("shape words are in the vocabulary") as usize;
        let row = w.token_embed.row_mut(tok);
        row.fill(0.0);
        row[MARKER_BASE + k] = 1.0;
    }

    let cols = w.kv_cols(PROBE_HEADS.color.1);
    let wv = &mut w.layers[PROBE_HEADS.color.0].wv;
    for r in 0..d {
        for c in cols.clone() {
            wv.set(r, c, 0.0);
        }
    }
    let pixels = (PATCH_PIXELS * PATCH_PIXELS) as f64;
    for p in 0..PATCH_PIXELS * PATCH_PIXELS {
        for ch in 0..CHANNELS {
            wv.set(p * CHANNELS + ch, cols.start + ch, 1.0 / pixels);
        }
    }
    let norm = (d as f64).sqrt();
    for (k, &shape) in Shape::ALL.iter().enumerate() {
        let target = channel_of(Color::of_shape(shape));
        for ch in 0..CHANNELS {
            let v = if ch == target { 2.0 } else { -1.0 };
            wv.set(MARKER_BASE + k, cols.start + ch, v / norm);
        }
    }
    Ok(w)
}
