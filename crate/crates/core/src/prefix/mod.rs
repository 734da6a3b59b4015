// SPDX-License-Identifier: MIT OR Apache-2.0

//! Text placed before the image, and what it does to the cached image values.
//!
//! Causal attention lets image positions read a prefix but never a suffix,
//! so a prefix is the only way text can reshape image KVs.

mod planted;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use planted::{planted_prefix_model, PREFIX_INJECTOR, PREFIX_PROBE};

use crate::error::{Error, Result};
use crate::model::ModelWeights;
use crate::numerics::Matrix;
use crate::probes::{image_values, scene_cache, score_episodes, sweep_values, EpisodeValues, Metric, ProbeResult};
use crate::synth::{tokenize, Color, Domain, Episode, Shape, SyntheticScene, Task};

/// Fixed control sentence for [`PrefixKind::Random`].
pub const RANDOM_PREFIX_TEXT: &str = "a rustic wooden table filled with freshly baked croissants dripping with honey , \
                                      a steaming pot of earl grey tea beside a bowl of ripe figs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrefixKind {
    None,
    Informative,
    Random,
    Incorrect,
}

impl PrefixKind {
    /// Report order.
    pub const ALL: [PrefixKind; 4] = [PrefixKind::None, PrefixKind::Informative, PrefixKind::Random, PrefixKind::Incorrect];

    pub fn name(self) -> &'static str {
        match self {
            PrefixKind::None => "none",
            PrefixKind::Informative => "informative",
            PrefixKind::Random => "random",
            PrefixKind::Incorrect => "incorrect",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixCondition {
    pub kind: PrefixKind,
    pub text: Vec<u32>,
}

/// `the image is taken at {domain} and it is from a synthetic scene with a {color} {shape}`
pub fn domain_prefix_text(domain: Domain, color: Color, shape: Shape) -> String {
    format!("the image is taken at {} and it is from a synthetic scene with a {} {}", domain.word(), color.word(), shape.word())
}

fn next_other<T: Copy + PartialEq>(all: &[T], x: T) -> T {
    let i = all.iter().position(|&y| y == x).expect("member of ALL");
    all[(i + 1) % all.len()]
}

impl PrefixCondition {
    pub fn none() -> Self {
        Self { kind: PrefixKind::None, text: Vec::new() }
    }

    pub fn random() -> Self {
        Self { kind: PrefixKind::Random, text: tokenize(RANDOM_PREFIX_TEXT) }
    }

    /// Domain and primary class of `scene`; the incorrect prefix names the
    /// other domain and the next colour and shape.
    pub fn for_scene(kind: PrefixKind, scene: &SyntheticScene) -> Result<Self> {
        let text = match kind {
            PrefixKind::None => return Ok(Self::none()),
            PrefixKind::Random => return Ok(Self::random()),
            PrefixKind::Informative | PrefixKind::Incorrect => {
                let primary = scene
                    .primary()
                    .ok_or_else(|| Error::InvalidInput("prefix needs a scene with a primary object".into()))?;
                if kind == PrefixKind::Informative {
                    domain_prefix_text(scene.domain, primary.color, primary.shape)
                } else {
                    domain_prefix_text(
                        scene.domain.other(),
                        next_other(&Color::ALL, primary.color),
                        next_other(&Shape::ALL, primary.shape),
                    )
                }
            }
        };
        Ok(Self { kind, text: tokenize(&text) })
    }

    /// Condition built from the episode's first probed scene.
    pub fn for_episode(kind: PrefixKind, episode: &Episode) -> Result<Self> {
        check_task(episode)?;
        let scene = match episode.task {
            Task::SemCorr => episode.support.first(),
            _ => episode.query.first(),
        }
        .ok_or_else(|| Error::InvalidInput("episode has no scenes".into()))?;
        Self::for_scene(kind, scene)
    }
}

fn check_task(episode: &Episode) -> Result<()> {
    match episode.task {
        Task::SemSeg | Task::RefSeg | Task::SemCorr => Ok(()),
        t => Err(Error::InvalidInput(format!("prefixing does not apply to {} episodes", t.name()))),
    }
}

/// Mean L2 distance between image values with and without a prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KvDelta {
    pub n_layers: usize,
    pub n_kv_heads: usize,
    /// Layer-major.
    pub delta: Vec<f64>,
}

impl KvDelta {
    pub fn get(&self, layer: usize, kv_head: usize) -> f64 {
        self.delta[layer * self.n_kv_heads + kv_head]
    }

    /// Largest head delta in `layer`.
    pub fn layer_max(&self, layer: usize) -> f64 {
        self.delta[layer * self.n_kv_heads..(layer + 1) * self.n_kv_heads].iter().copied().fold(0.0, f64::max)
    }
}

pub fn kv_delta(weights: &ModelWeights, scene: &SyntheticScene, condition: &PrefixCondition) -> Result<KvDelta> {
    let cfg = &weights.config;
    let base = scene_cache(weights, scene, &[])?;
    let with = scene_cache(weights, scene, &condition.text)?;
    let mut delta = Vec::with_capacity(cfg.n_layers * cfg.n_kv_heads);
    for l in 0..cfg.n_layers {
        for h in 0..cfg.n_kv_heads {
            let (a, b) = (image_values(&base, l, h)?, image_values(&with, l, h)?);
            delta.push(mean_row_distance(&a, &b));
        }
    }
    Ok(KvDelta { n_layers: cfg.n_layers, n_kv_heads: cfg.n_kv_heads, delta })
}

fn mean_row_distance(a: &Matrix, b: &Matrix) -> f64 {
    let total: f64 = a
        .row_iter()
        .zip(b.row_iter())
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt())
        .sum();
    total / a.rows() as f64
}

/// The base probe for the episode's task with `condition` placed before every image.
pub fn prefixed_probe(
    weights: &ModelWeights,
    episode: &Episode,
    condition: &PrefixCondition,
    layer: usize,
    kv_head: usize,
) -> Result<ProbeResult> {
    check_task(episode)?;
    weights.check_head(layer, kv_head)?;
    let ev = EpisodeValues::compute(weights, episode, &condition.text)?;
    score_episodes(std::slice::from_ref(&ev), layer, kv_head)
}

/// How the probed head is chosen for each condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadSelection {
    /// Best cell of the unprefixed sweep, used for every condition.
    #[default]
    FromBaseline,
    /// Best cell of each condition's own sweep.
    PerCondition,
    Fixed { layer: usize, kv_head: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixRow {
    pub task: Task,
    pub condition: PrefixKind,
    pub layer: usize,
    pub kv_head: usize,
    pub metric: Metric,
    pub value: f64,
}

/// Every condition over `episodes` (one task), in [`PrefixKind::ALL`] order.
pub fn prefix_study(weights: &ModelWeights, episodes: &[Episode], selection: HeadSelection) -> Result<Vec<PrefixRow>> {
    let Some(first) = episodes.first() else {
        return Err(Error::InvalidInput("prefix study needs episodes".into()));
    };
    let task = first.task;
    for e in episodes {
        check_task(e)?;
        if e.task != task {
            return Err(Error::InvalidInput("episodes of mixed tasks".into()));
        }
    }
    let cfg = &weights.config;
    let values_for = |kind: PrefixKind| -> Result<Vec<EpisodeValues<'_>>> {
        episodes
            .iter()
            .map(|e| EpisodeValues::compute(weights, e, &PrefixCondition::for_episode(kind, e)?.text))
            .collect()
    };
    let fixed = match selection {
        HeadSelection::FromBaseline => {
            let best = sweep_values(&values_for(PrefixKind::None)?, cfg.n_layers, cfg.n_kv_heads)?.global_max;
            Some((best.layer, best.kv_head))
        }
        HeadSelection::Fixed { layer, kv_head } => {
            weights.check_head(layer, kv_head)?;
            Some((layer, kv_head))
        }
        HeadSelection::PerCondition => None,
    };
    let mut rows = Vec::with_capacity(PrefixKind::ALL.len());
    for kind in PrefixKind::ALL {
        let values = values_for(kind)?;
        let r = match fixed {
            Some((l, h)) => score_episodes(&values, l, h)?,
            None => sweep_values(&values, cfg.n_layers, cfg.n_kv_heads)?.global_max,
        };
        rows.push(PrefixRow { task, condition: kind, layer: r.layer, kv_head: r.kv_head, metric: r.metric, value: r.value });
    }
    Ok(rows)
}

/// CSV with columns `task,condition,layer,kv_head,metric,value`.
pub fn prefix_csv(rows: &[PrefixRow]) -> String {
    let mut out = String::from("task,condition,layer,kv_head,metric,value\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.task.name(), r.condition.name(), r.layer, r.kv_head, r.metric.name(), r.value);
    }
    out
}
