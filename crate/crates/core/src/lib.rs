// SPDX-License-Identifier: MIT OR Apache-2.0

//! # kvlens
//!
//! A desk-scale laboratory for studying the image keys and values that a
//! multimodal decoder stores in its KV cache.
//!
//! The crate contains a small decoder (image patches followed by text,
//! causal grouped-query attention with rotary positions, explicit per-layer
//! KV cache, attention-knockout hooks) together with the experiments that
//! read that cache:
//!
//! - [`probes`]: segmentation and correspondence probes over cached image
//!   values, plus a pooled-similarity readout.
//! - [`keys`]: cross-image variance of cached image keys, bimodal
//!   thresholding into input-agnostic and input-dependent heads, PCA export.
//! - [`interventions`]: knockout of text-to-image attention per head, with
//!   size-matched controls and a synthetic existence-QA harness.
//! - [`prefix`]: text prefixes placed before the image and their effect on
//!   image values.
//! - [`report`]: config-driven runner writing CSV/JSON artifacts and a
//!   checksummed manifest.
//!
//! Everything runs on synthetic scenes from [`synth`] and on the dense
//! kernels in [`numerics`].

pub mod error;
pub mod interventions;
pub mod keys;
pub mod model;
pub mod numerics;
pub mod prefix;
pub mod probes;
pub mod report;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
