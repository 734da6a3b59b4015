// SPDX-License-Identifier: MIT OR Apache-2.0

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Sequence layout: `[prefix text][image patches][query text]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Spans {
    pub prefix: Range<usize>,
    pub image: Range<usize>,
    pub query: Range<usize>,
}

impl Spans {
    pub fn new(n_prefix: usize, n_image: usize, n_query: usize) -> Self {
        let a = n_prefix;
        let b = a + n_image;
        Self { prefix: 0..a, image: a..b, query: b..b + n_query }
    }

    pub fn len(&self) -> usize {
        self.query.end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Post-rotary keys and values for every `(layer, kv_head, position)`.
///
/// Entries are appended in position order and never rewritten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KvCache {
    n_layers: usize,
    n_kv_heads: usize,
    d_head: usize,
    spans: Spans,
    /// `[layer][head]` -> flat `positions x d_head`
    keys: Vec<Vec<Vec<f64>>>,
    values: Vec<Vec<Vec<f64>>>,
}

/// Image-span rows of one `(layer, kv_head)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageKv {
    pub keys: Matrix,
    pub values: Matrix,
}

impl KvCache {
    pub fn new(n_layers: usize, n_kv_heads: usize, d_head: usize, spans: Spans) -> Self {
        let cap = spans.len() * d_head;
        let empty = || vec![Vec::with_capacity(cap); n_kv_heads];
        Self {
            n_layers,
            n_kv_heads,
            d_head,
            spans,
            keys: (0..n_layers).map(|_| empty()).collect(),
            values: (0..n_layers).map(|_| empty()).collect(),
        }
    }

    pub fn spans(&self) -> &Spans {
        &self.spans
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn n_kv_heads(&self) -> usize {
        self.n_kv_heads
    }

    pub fn d_head(&self) -> usize {
        self.d_head
    }

    /// Number of positions written for `(layer, head)`.
    pub fn len(&self, layer: usize, head: usize) -> usize {
        self.keys[layer][head].len() / self.d_head
    }

    pub fn is_empty(&self) -> bool {
        self.keys.iter().flatten().all(Vec::is_empty)
    }

    /// Appends the entry for the next position of `(layer, head)`.
    pub fn append(&mut self, layer: usize, head: usize, key: &[f64], value: &[f64]) {
        debug_assert_eq!(key.len(), self.d_head);
        debug_assert_eq!(value.len(), self.d_head);
        self.keys[layer][head].extend_from_slice(key);
        self.values[layer][head].extend_from_slice(value);
    }

    pub fn key(&self, layer: usize, head: usize, pos: usize) -> &[f64] {
        &self.keys[layer][head][pos * self.d_head..(pos + 1) * self.d_head]
    }

    pub fn value(&self, layer: usize, head: usize, pos: usize) -> &[f64] {
        &self.values[layer][head][pos * self.d_head..(pos + 1) * self.d_head]
    }

    fn check(&self, layer: usize, head: usize) -> Result<()> {
        if layer >= self.n_layers || head >= self.n_kv_heads {
            return Err(Error::OutOfRange(format!(
                "(layer {layer}, kv head {head}) outside cache of {}x{}",
                self.n_layers, self.n_kv_heads
            )));
        }
        Ok(())
    }

    fn span_rows(&self, store: &[Vec<Vec<f64>>], layer: usize, head: usize, span: Range<usize>) -> Matrix {
        let flat = &store[layer][head][span.start * self.d_head..span.end * self.d_head];
        Matrix::new(span.len(), self.d_head, flat.to_vec()).expect("span lies inside the cache")
    }

    /// Image keys and values of `(layer, head)`, one row per image position.
    pub fn image_kv(&self, layer: usize, head: usize) -> Result<ImageKv> {
        self.check(layer, head)?;
        let span = self.spans.image.clone();
        Ok(ImageKv {
            keys: self.span_rows(&self.keys, layer, head, span.clone()),
            values: self.span_rows(&self.values, layer, head, span),
        })
    }

    /// Value rows over an arbitrary position range.
    pub fn values_in(&self, layer: usize, head: usize, span: Range<usize>) -> Result<Matrix> {
        self.check(layer, head)?;
        if span.end > self.len(layer, head) {
            return Err(Error::OutOfRange(format!("positions {span:?} beyond cache length")));
        }
        Ok(self.span_rows(&self.values, layer, head, span))
    }
}

/// Free-function form of [`KvCache::image_kv`].
pub fn image_kv(cache: &KvCache, layer: usize, kv_head: usize) -> Result<ImageKv> {
    cache.image_kv(layer, kv_head)
}
