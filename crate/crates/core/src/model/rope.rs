// SPDX-License-Identifier: MIT OR Apache-2.0

//! Rotary position encoding on interleaved coordinate pairs.

/// Rotates each pair `(x[2i], x[2i+1])` by `position * base^(-2i/d)`.
pub fn rope_apply_in_place(x: &mut [f64], position: usize, base: f64) {
    debug_assert!(x.len().is_multiple_of(2), "rotary encoding needs an even width");
    let d = x.len() as f64;
    let p = position as f64;
    for (i, pair) in x.chunks_exact_mut(2).enumerate() {
        let angle = p * base.powf(-2.0 * i as f64 / d);
        let (sin, cos) = angle.sin_cos();
        let (a, b) = (pair[0], pair[1]);
        pair[0] = a * cos - b * sin;
        pair[1] = a * sin + b * cos;
    }
}

pub fn rope_apply(x: &[f64], position: usize, base: f64) -> Vec<f64> {
    let mut out = x.to_vec();
    rope_apply_in_place(&mut out, position, base);
    out
}
