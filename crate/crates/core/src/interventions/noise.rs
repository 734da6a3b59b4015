// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeSet;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{build_knockout, run_existence_eval, Condition, ExistenceQa, InterventionRow, Readout};
use crate::error::{Error, Result};
use crate::keys::{classify_keys, variance_map, KeyClassification, LayerGroup};
use crate::model::{build_model, ModelConfig, ModelWeights, PlantSpec};
use crate::numerics::{solve, Matrix};
use crate::seed;
use crate::synth::{gen_episode, gen_scene, pixel_projection, EpisodeSizes, Palette, SceneSpec, Shape, Task, PATCH_PIXELS};

const CHANNELS: usize = 3;
const PIXELS: usize = PATCH_PIXELS * PATCH_PIXELS;
const RAW_LEN: usize = PIXELS * CHANNELS;

/// Parameters of the planted-noise study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseStudyConfig {
    pub seed: u64,
    pub n_items: usize,
    /// Scenes used to measure key variance.
    pub n_variance_scenes: usize,
    /// Total weight of the redness detectors on the answer dimension.
    pub signal_gain: f64,
    /// Weight of each noise head on the answer dimension.
    pub noise_gain: f64,
    /// "no" logit; "yes" wins when the answer dimension exceeds it.
    pub decision_threshold: f64,
}

impl Default for NoiseStudyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_items: 200,
            n_variance_scenes: 16,
            signal_gain: 1.0,
            noise_gain: 3.0,
            decision_threshold: 0.04,
        }
    }
}

/// A planted-noise model with its readout and the heads whose keys were planted.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub weights: ModelWeights,
    pub readout: Readout,
    pub planted: BTreeSet<(usize, usize)>,
    /// Late heads whose values are pure pixel noise.
    pub noise_heads: Vec<(usize, usize)>,
    /// Heads carrying the redness signal.
    pub detector_heads: Vec<(usize, usize)>,
    pub answer_dim: usize,
}

/// Layers whose every head is planted agnostic, and the late heads that are.
fn planted_layout(n_layers: usize, n_kv_heads: usize) -> (Vec<usize>, Vec<(usize, usize)>) {
    let early = vec![0, 1];
    let late: Vec<(usize, usize)> = [n_layers - 2, n_layers - 1]
        .iter()
        .flat_map(|&l| (n_kv_heads / 2..n_kv_heads).map(move |h| (l, h)))
        .collect();
    (early, late)
}

/// Zero-sum filter over one patch, orthogonal per channel to flat and
/// linearly ramped pixels, so fully covered object patches and the flat
/// background read as 0 and only pixel noise remains.
fn noise_filter(seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit std");
    let basis: Vec<Vec<f64>> = {
        let ones = vec![1.0; PIXELS];
        let rows: Vec<f64> = (0..PIXELS).map(|p| (p / PATCH_PIXELS) as f64).collect();
        let cols: Vec<f64> = (0..PIXELS).map(|p| (p % PATCH_PIXELS) as f64).collect();
        let mut ortho: Vec<Vec<f64>> = Vec::new();
        for mut v in [ones, rows, cols] {
            for b in &ortho {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= n);
            ortho.push(v);
        }
        ortho
    };
    let mut filter = vec![0.0; RAW_LEN];
    for ch in 0..CHANNELS {
        let mut v: Vec<f64> = (0..PIXELS).map(|_| normal.sample(&mut rng)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        for (p, x) in v.into_iter().enumerate() {
            filter[p * CHANNELS + ch] = x;
        }
    }
    let n = filter.iter().map(|x| x * x).sum::<f64>().sqrt();
    filter.iter_mut().for_each(|x| *x /= n);
    filter
}

/// Builds the planted-noise model.
///
/// Random weights everywhere, then: every attention output projection and
/// MLP output is zeroed so only the wired heads write to the residual; the
/// patch embedding lifts raw pixels into the first 48 residual dims; token
/// embeddings are cleared on those dims and on the answer dim. Keys are
/// planted agnostic in all heads of layers 0 and 1 and in the upper half of
/// the kv heads of the last two layers.
///
/// In the late third, the first query head of every non-planted kv head
/// attends uniformly (zero query) and reads the patch's mean `r - b`; the
/// first query head of every planted late head reads a seeded noise filter.
/// Both write their first value coordinate into the answer dim.
pub fn planted_noise_model(config: &ModelConfig, study: &NoiseStudyConfig) -> Result<NoiseModel> {
    if config.patch_dim != RAW_LEN || config.d_model <= RAW_LEN || config.n_layers < 6 || config.n_kv_heads < 2 {
        return Err(Error::Config("planted noise model needs patch_dim 48, d_model > 48, 6+ layers, 2+ kv heads".into()));
    }
    let cfg = ModelConfig { seed: seed::derive_named(study.seed, "noise-model"), ..config.clone() };
    let (early_layers, late_planted) = planted_layout(cfg.n_layers, cfg.n_kv_heads);
    let mut plant = PlantSpec::whole_layers(&early_layers, cfg.n_kv_heads);
    plant.heads.extend(late_planted.iter().copied());
    let mut w = build_model(&cfg, Some(&plant))?;
    let d = cfg.d_model;
    let answer_dim = d - 1;

    let mut lift = Matrix::zeros(RAW_LEN, d);
    for i in 0..RAW_LEN {
        lift.set(i, i, 1.0);
    }
    w.patch_proj = solve(&pixel_projection(cfg.patch_dim), &lift)?;
    for t in 0..cfg.vocab_size {
        let row = w.token_embed.row_mut(t);
        row[..RAW_LEN].fill(0.0);
        row[answer_dim] = 0.0;
    }
    for lw in w.layers.iter_mut() {
        lw.wo.data_mut().fill(0.0);
        lw.w_out.data_mut().fill(0.0);
    }

    let group = cfg.group_size();
    let late = cfg.n_layers - cfg.n_layers / 3..cfg.n_layers;
    let detector_heads: Vec<(usize, usize)> = late
        .clone()
        .flat_map(|l| (0..cfg.n_kv_heads).map(move |h| (l, h)))
        .filter(|c| !plant.heads.contains(c))
        .collect();
    let per_detector = study.signal_gain / detector_heads.len() as f64;
    let wire = |w: &mut ModelWeights, (l, g): (usize, usize), filter: &[f64], gain: f64| {
        let qh = g * group;
        let qcols = w.q_cols(qh);
        let vcol = w.kv_cols(g).start;
        let lw = &mut w.layers[l];
        for r in 0..d {
            for c in qcols.clone() {
                lw.wq.set(r, c, 0.0);
            }
            lw.wv.set(r, vcol, if r < RAW_LEN { filter[r] } else { 0.0 });
        }
        lw.wo.set(qcols.start, answer_dim, gain);
    };
    let mut redness = vec![0.0; RAW_LEN];
    for p in 0..PIXELS {
        redness[p * CHANNELS] = 1.0 / PIXELS as f64;
        redness[p * CHANNELS + 2] = -1.0 / PIXELS as f64;
    }
    for &head in &detector_heads {
        wire(&mut w, head, &redness, per_detector);
    }
    for &head in &late_planted {
        let filter = noise_filter(seed::derive(seed::derive_named(study.seed, "noise-filter"), (head.0 * 1000 + head.1) as u64));
        wire(&mut w, head, &filter, study.noise_gain);
    }

    let mut readout = Readout { weights: Matrix::zeros(d, 2), bias: [0.0, study.decision_threshold] };
    readout.weights.set(answer_dim, 0, 1.0);
    Ok(NoiseModel { weights: w, readout, planted: plant.heads, noise_heads: late_planted, detector_heads, answer_dim })
}

/// Scenes for the study: one object per scene, square always red, and every
/// question asks about the square.
pub fn noise_study_sizes(n_items: usize) -> EpisodeSizes {
    EpisodeSizes {
        query: n_items,
        scene: SceneSpec { n_objects: 1, palette: Palette::ByShape, ..SceneSpec::default() },
        qa_shape: Some(Shape::Square),
        ..EpisodeSizes::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseStudyReport {
    pub rows: Vec<InterventionRow>,
    pub classification: KeyClassification,
    pub planted: BTreeSet<(usize, usize)>,
    pub knockouts: Vec<(Condition, BTreeSet<(usize, usize)>)>,
}

impl NoiseStudyReport {
    pub fn row(&self, condition: Condition) -> Option<&InterventionRow> {
        self.rows.iter().find(|r| r.condition == condition)
    }
}

pub fn planted_noise_study(seed: u64) -> Result<NoiseStudyReport> {
    planted_noise_study_with(&ModelConfig::default(), &NoiseStudyConfig { seed, ..NoiseStudyConfig::default() })
}

/// Classifies the planted model's keys from measured variance, then answers
/// the QA set under none / agnostic / dependent / random knockout in the late group.
pub fn planted_noise_study_with(config: &ModelConfig, study: &NoiseStudyConfig) -> Result<NoiseStudyReport> {
    let model = planted_noise_model(config, study)?;
    let var_seed = seed::derive_named(study.seed, "variance-scenes");
    let scenes: Vec<_> = (0..study.n_variance_scenes as u64)
        .map(|i| gen_scene(seed::derive(var_seed, i), &SceneSpec::default()))
        .collect::<Result<_>>()?;
    let classification = classify_keys(&variance_map(&model.weights, &scenes)?, None)?;
    let episode = gen_episode(Task::ExistenceQa, seed::derive_named(study.seed, "qa"), &noise_study_sizes(study.n_items))?;
    let items = ExistenceQa::from_episode(&episode)?;
    let mut rows = Vec::new();
    let mut knockouts = Vec::new();
    for condition in Condition::ALL {
        let spec = build_knockout(&classification, LayerGroup::Late, condition, study.seed)?;
        let r = run_existence_eval(&model.weights, &model.readout, &items, &spec)?;
        rows.push(InterventionRow {
            condition,
            layer_group: LayerGroup::Late,
            f1: r.f1,
            accuracy: r.accuracy,
            n_items: r.n_items,
            seed: study.seed,
        });
        knockouts.push((condition, spec.targets));
    }
    Ok(NoiseStudyReport { rows, classification, planted: model.planted, knockouts })
}


