// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeSet;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::seed;

/// Standard deviation of the Gaussian weight init.
pub const INIT_STD: f64 = 0.02;

const WEIGHTS_FORMAT: &str = "kvlens-weights";
const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub attn_norm: Vec<f64>,
    /// `d_model x (n_q_heads * d_head)`
    pub wq: Matrix,
    /// `d_model x (n_kv_heads * d_head)`
    pub wk: Matrix,
    /// Key bias, `n_kv_heads * d_head`.
    pub bk: Vec<f64>,
    /// `d_model x (n_kv_heads * d_head)`
    pub wv: Matrix,
    /// `(n_q_heads * d_head) x d_model`
    pub wo: Matrix,
    pub mlp_norm: Vec<f64>,
    /// `d_model x 4 d_model`
    pub w_in: Matrix,
    /// `4 d_model x d_model`
    pub w_out: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub config: ModelConfig,
    /// `patch_dim x d_model`
    pub patch_proj: Matrix,
    /// `vocab_size x d_model`
    pub token_embed: Matrix,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Vec<f64>,
    /// `d_model x vocab_size`
    pub unembed: Matrix,
}

/// Heads whose image keys are made input-independent at build time.
///
/// For each planted `(layer, kv_head)` the key projection columns of that
/// head are multiplied by `input_gain` and its key bias is set to
/// `bias_scale` times a seeded unit vector. With the default gain of 0 the
/// pre-rotary key is the bias alone, whatever the input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub heads: BTreeSet<(usize, usize)>,
    #[serde(default)]
    pub input_gain: f64,
    #[serde(default = "default_bias_scale")]
    pub bias_scale: f64,
}

fn default_bias_scale() -> f64 {
    5.0
}

impl PlantSpec {
    pub fn new(heads: impl IntoIterator<Item = (usize, usize)>) -> Self {
        Self { heads: heads.into_iter().collect(), input_gain: 0.0, bias_scale: default_bias_scale() }
    }

    /// Every kv head of the listed layers.
    pub fn whole_layers(layers: &[usize], n_kv_heads: usize) -> Self {
        Self::new(layers.iter().flat_map(|&l| (0..n_kv_heads).map(move |h| (l, h))))
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut impl rand::Rng) -> Matrix {
    let normal = Normal::new(0.0, INIT_STD).expect("positive std");
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Matrix::new(rows, cols, data).expect("shape matches data")
}

/// Seeded Gaussian init, then the optional key planting.
pub fn build_model(config: &ModelConfig, plant: Option<&PlantSpec>) -> Result<ModelWeights> {
    config.validate()?;
    let d = config.d_model;
    let mut rng = seed::rng(seed::derive_named(config.seed, "weights"));
    let patch_proj = gaussian(config.patch_dim, d, &mut rng);
    let token_embed = gaussian(config.vocab_size, d, &mut rng);
    let mut layers = Vec::with_capacity(config.n_layers);
    for _ in 0..config.n_layers {
        layers.push(LayerWeights {
            attn_norm: vec![1.0; d],
            wq: gaussian(d, config.q_width(), &mut rng),
            wk: gaussian(d, config.kv_width(), &mut rng),
            bk: vec![0.0; config.kv_width()],
            wv: gaussian(d, config.kv_width(), &mut rng),
            wo: gaussian(config.q_width(), d, &mut rng),
            mlp_norm: vec![1.0; d],
            w_in: gaussian(d, config.mlp_hidden(), &mut rng),
            w_out: gaussian(config.mlp_hidden(), d, &mut rng),
        });
    }
    let unembed = gaussian(d, config.vocab_size, &mut rng);
    let mut weights = ModelWeights {
        config: config.clone(),
        patch_proj,
        token_embed,
        layers,
        final_norm: vec![1.0; d],
        unembed,
    };
    if let Some(plant) = plant {
        weights.plant_keys(plant)?;
    }
    Ok(weights)
}

impl ModelWeights {
    /// Column range of kv head `h` inside `wk`, `wv` and `bk`.
    pub fn kv_cols(&self, h: usize) -> std::ops::Range<usize> {
        h * self.config.d_head..(h + 1) * self.config.d_head
    }

    /// Column range of query head `h` inside `wq` (and row range inside `wo`).
    pub fn q_cols(&self, h: usize) -> std::ops::Range<usize> {
        self.kv_cols(h)
    }

    pub fn check_head(&self, layer: usize, kv_head: usize) -> Result<()> {
        if layer >= self.config.n_layers || kv_head >= self.config.n_kv_heads {
            return Err(Error::OutOfRange(format!(
                "(layer {layer}, kv head {kv_head}) outside {}x{}",
                self.config.n_layers, self.config.n_kv_heads
            )));
        }
        Ok(())
    }

    pub fn plant_keys(&mut self, plant: &PlantSpec) -> Result<()> {
        for &(layer, head) in &plant.heads {
            self.check_head(layer, head)?;
        }
        let dh = self.config.d_head;
        for &(layer, head) in &plant.heads {
            let cols = self.kv_cols(head);
            let lw = &mut self.layers[layer];
            for r in 0..lw.wk.rows() {
                for c in cols.clone() {
                    let v = lw.wk.get(r, c) * plant.input_gain;
                    lw.wk.set(r, c, v);
                }
            }
            let stream = seed::derive(seed::derive_named(self.config.seed, "plant"), (layer * 1_000 + head) as u64);
            let mut rng = seed::rng(stream);
            let normal = Normal::new(0.0, 1.0).expect("unit std");
            let mut dir: Vec<f64> = (0..dh).map(|_| normal.sample(&mut rng)).collect();
            let n = crate::numerics::norm(&dir);
            dir.iter_mut().for_each(|x| *x *= plant.bias_scale / n);
            lw.bk[cols].copy_from_slice(&dir);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let d = c.d_model;
        let shape_ok = |m: &Matrix, r: usize, cols: usize| m.rows() == r && m.cols() == cols;
        let mut ok = shape_ok(&self.patch_proj, c.patch_dim, d)
            && shape_ok(&self.token_embed, c.vocab_size, d)
            && shape_ok(&self.unembed, d, c.vocab_size)
            && self.final_norm.len() == d
            && self.layers.len() == c.n_layers;
        for lw in &self.layers {
            ok &= lw.attn_norm.len() == d
                && lw.mlp_norm.len() == d
                && shape_ok(&lw.wq, d, c.q_width())
                && shape_ok(&lw.wk, d, c.kv_width())
                && lw.bk.len() == c.kv_width()
                && shape_ok(&lw.wv, d, c.kv_width())
                && shape_ok(&lw.wo, c.q_width(), d)
                && shape_ok(&lw.w_in, d, c.mlp_hidden())
                && shape_ok(&lw.w_out, c.mlp_hidden(), d);
        }
        if !ok {
            return Err(Error::Config("weight shapes do not match the config".into()));
        }
        Ok(())
    }

    /// Writes the weights as versioned JSON. Floats round-trip bit-exactly.
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = WeightsFile { format: WEIGHTS_FORMAT.into(), version: WEIGHTS_VERSION, weights: self.clone() };
        std::fs::write(path, serde_json::to_vec(&file)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_json_bytes(&bytes)
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        let file: WeightsFile = serde_json::from_slice(bytes)?;
        if file.format != WEIGHTS_FORMAT || file.version != WEIGHTS_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported weights file {} v{}",
                file.format, file.version
            )));
        }
        file.weights.validate()?;
        Ok(file.weights)
    }

    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        let file = WeightsFile { format: WEIGHTS_FORMAT.into(), version: WEIGHTS_VERSION, weights: self.clone() };
        Ok(serde_json::to_vec(&file)?)
    }
}

#[derive(Serialize, Deserialize)]
struct WeightsFile {
    format: String,
    version: u32,
    weights: ModelWeights,
}
