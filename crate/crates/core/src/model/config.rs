// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions of the toy decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_q_heads: usize,
    pub n_kv_heads: usize,
    pub d_head: usize,
    pub vocab_size: usize,
    pub patch_dim: usize,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_rope_base() -> f64 {
    10_000.0
}

impl Default for ModelConfig {
    /// 12 layers, 8 query heads sharing 4 KV heads, 8-dim heads, 48-dim
    /// patches (4x4 pixels, 3 channels), 256-token vocabulary.
    fn default() -> Self {
        Self {
            n_layers: 12,
            d_model: 64,
            n_q_heads: 8,
            n_kv_heads: 4,
            d_head: 8,
            vocab_size: 256,
            patch_dim: 48,
            rope_base: default_rope_base(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_q_heads", self.n_q_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("d_head", self.d_head),
            ("vocab_size", self.vocab_size),
            ("patch_dim", self.patch_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.n_q_heads.is_multiple_of(self.n_kv_heads) {
            return Err(Error::Config(format!(
                "{} query heads cannot be grouped over {} kv heads",
                self.n_q_heads, self.n_kv_heads
            )));
        }
        if self.d_model != self.n_q_heads * self.d_head {
            return Err(Error::Config(format!(
                "d_model {} != n_q_heads {} * d_head {}",
                self.d_model, self.n_q_heads, self.d_head
            )));
        }
        if !self.d_head.is_multiple_of(2) {
            return Err(Error::Config(format!("d_head {} must be even for rotary pairs", self.d_head)));
        }
        if !(self.rope_base.is_finite() && self.rope_base > 0.0) {
            return Err(Error::Config(format!("rope_base {} must be positive", self.rope_base)));
        }
        Ok(())
    }

    /// Query heads per KV head.
    pub fn group_size(&self) -> usize {
        self.n_q_heads / self.n_kv_heads
    }

    /// KV head read by query head `q_head`.
    pub fn kv_head_of(&self, q_head: usize) -> usize {
        q_head / self.group_size()
    }

    pub fn mlp_hidden(&self) -> usize {
        4 * self.d_model
    }

    pub fn q_width(&self) -> usize {
        self.n_q_heads * self.d_head
    }

    pub fn kv_width(&self) -> usize {
        self.n_kv_heads * self.d_head
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_with_group_of_two() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.group_size(), 2);
        assert_eq!(c.kv_head_of(5), 2);
    }

    #[test]
    fn invariants_are_enforced() {
        let bad_group = ModelConfig { n_kv_heads: 3, ..ModelConfig::default() };
        assert!(bad_group.validate().is_err());
        let bad_width = ModelConfig { d_model: 60, ..ModelConfig::default() };
        assert!(bad_width.validate().is_err());
        let odd = ModelConfig { d_head: 3, d_model: 24, ..ModelConfig::default() };
        assert!(odd.validate().is_err());
    }
}
