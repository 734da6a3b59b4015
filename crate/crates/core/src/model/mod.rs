// SPDX-License-Identifier: MIT OR Apache-2.0

//! The toy multimodal decoder.
//!
//! Image patches are projected into the residual stream and placed between
//! an optional text prefix and the query text. Every layer runs causal
//! grouped-query attention with rotary positions and an MLP, writing its
//! post-rotary keys and values into a [`KvCache`].

mod cache;
mod config;
mod forward;
mod rope;
mod weights;

pub use cache::{image_kv, ImageKv, KvCache, Spans};
pub use config::ModelConfig;
pub use forward::{
    forward, forward_with, AttentionRecord, ForwardOptions, ForwardOutput, KnockoutSpec,
    MultimodalInput,
};
pub use rope::{rope_apply, rope_apply_in_place};
pub use weights::{build_model, LayerWeights, ModelWeights, PlantSpec, INIT_STD};
