// SPDX-License-Identifier: MIT OR Apache-2.0

//! Deterministic patch-grid scenes and probing episodes.
//!
//! Scenes are rendered at pixel level (4x4 pixels per patch, RGB), then each
//! patch is flattened and passed through a fixed seeded projection to give
//! the model's patch vectors. Objects carry patch-level masks, keypoints and
//! referring expressions; captions follow a small fixed grammar.

mod episode;
mod scene;
mod vocab;

pub use episode::{gen_episode, Episode, EpisodeSizes, ExistenceItem, Task};
pub use scene::{
    gen_scene, pixel_projection, random_layout, render, rle_decode, rle_encode, BBox, Color, Domain,
    ObjectJson, Palette, Placement, ReferringExpression, SceneJson, SceneLayout, SceneObject, SceneSpec,
    Shape, SyntheticScene, PATCH_PIXELS,
};
pub use vocab::{detokenize, token_id, tokenize, vocab_size, UNK};
