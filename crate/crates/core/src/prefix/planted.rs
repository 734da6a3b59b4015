// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::error::{Error, Result};
use crate::model::{build_model, ModelConfig, ModelWeights};
use crate::numerics::{solve, Matrix};
use crate::synth::{pixel_projection, token_id, Color, PATCH_PIXELS};

/// Layer-0 head that copies a colour word from the prefix into patches of that colour.
pub const PREFIX_INJECTOR: (usize, usize) = (0, 0);
/// Head whose values read the injected marker.
pub const PREFIX_PROBE: (usize, usize) = (1, 0);

const CHANNELS: usize = 3;
const PIXELS: usize = PATCH_PIXELS * PATCH_PIXELS;
const RAW_LEN: usize = PIXELS * CHANNELS;
/// Colour-word key plane.
const KEY_DIMS: [usize; 2] = [RAW_LEN, RAW_LEN + 1];
/// Set on every colour word; the injector's value.
const WORD_MARK: usize = RAW_LEN + 2;
/// Where the injector writes.
const PATCH_MARK: usize = RAW_LEN + 3;
const QUERY_GAIN: f64 = 6.0;

/// Orthonormal coordinates of `rgb` in the plane orthogonal to grey.
fn chroma(rgb: [f64; 3]) -> [f64; 2] {
    let s6 = 6f64.sqrt();
    let s2 = 2f64.sqrt();
    [(2.0 * rgb[0] - rgb[1] - rgb[2]) / s6, (rgb[1] - rgb[2]) / s2]
}

/// A model in which a colour word placed before the image marks the patches
/// of that colour.
///
/// Only the injector writes to the residual (every other output projection
/// and MLP output is zero). Its query is the patch's mean chroma, its key is
/// the colour word's chroma direction, both in the slowest rotary pair, so
/// a patch attends to a prefix colour word of its own colour and adds a
/// marker. The probe head at layer 1 reads only that marker. A text-only
/// pass such as `red square` picks the marker up from its own colour word,
/// so text class vectors point at it.
pub fn planted_prefix_model(config: &ModelConfig) -> Result<ModelWeights> {
    if config.patch_dim != RAW_LEN || config.d_model <= PATCH_MARK || config.n_layers < 2 || config.d_head < 2 {
        return Err(Error::Config("planted prefix model needs patch_dim 48, d_model > 51, 2+ layers".into()));
    }
    let mut w = build_model(config, None)?;
    let d = config.d_model;
    let dh = config.d_head;

    let mut lift = Matrix::zeros(RAW_LEN, d);
    for i in 0..RAW_LEN {
        lift.set(i, i, 1.0);
    }
    w.patch_proj = solve(&pixel_projection(config.patch_dim), &lift)?;
    for t in 0..config.vocab_size {
        w.token_embed.row_mut(t)[..=PATCH_MARK].fill(0.0);
    }
    for c in Color::ALL {
        let tok = token_id(c.word()).expect("colour words are in the vocabulary") as usize;
        let ch = chroma(c.rgb());
        let n = (ch[0] * ch[0] + ch[1] * ch[1]).sqrt();
        let row = w.token_embed.row_mut(tok);
        row[KEY_DIMS[0]] = ch[0] / n;
        row[KEY_DIMS[1]] = ch[1] / n;
        row[WORD_MARK] = 1.0;
    }
    for lw in w.layers.iter_mut() {
        lw.wo.data_mut().fill(0.0);
        lw.w_out.data_mut().fill(0.0);
    }

    let (il, ih) = PREFIX_INJECTOR;
    let q_head = ih * config.group_size();
    let qcols = w.q_cols(q_head);
    let kcols = w.kv_cols(ih);
    let slow = [qcols.end - 2, qcols.end - 1];
    let kslow = [kcols.end - 2, kcols.end - 1];
    let lw = &mut w.layers[il];
    for r in 0..d {
        for c in qcols.clone() {
            lw.wq.set(r, c, 0.0);
        }
        for c in kcols.clone() {
            lw.wk.set(r, c, 0.0);
            lw.wv.set(r, c, 0.0);
        }
    }
    for p in 0..PIXELS {
        for ch in 0..CHANNELS {
            let mut unit = [0.0; 3];
            unit[ch] = 1.0;
            let proj = chroma(unit);
            for k in 0..2 {
                lw.wq.set(p * CHANNELS + ch, slow[k], QUERY_GAIN * proj[k] / PIXELS as f64);
            }
        }
    }
    for k in 0..2 {
        lw.wk.set(KEY_DIMS[k], kslow[k], 1.0);
    }
    lw.wv.set(WORD_MARK, kcols.start, 1.0);
    lw.wo.set(qcols.start, PATCH_MARK, 1.0);
    debug_assert_eq!(slow[1] - qcols.start, dh - 1);

    let (pl, ph) = PREFIX_PROBE;
    let pcols = w.kv_cols(ph);
    let lw = &mut w.layers[pl];
    for r in 0..d {
        for c in pcols.clone() {
            lw.wv.set(r, c, 0.0);
        }
    }
    lw.wv.set(PATCH_MARK, pcols.start, 1.0);
    Ok(w)
}
