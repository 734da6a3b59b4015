// SPDX-License-Identifier: MIT OR Apache-2.0

//! Attention knockout over layer groups and the existence-QA harness.

mod noise;

use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use noise::{
    noise_study_sizes, planted_noise_model, planted_noise_study, planted_noise_study_with, NoiseModel, NoiseStudyConfig,
    NoiseStudyReport,
};

use crate::error::{Error, Result};
use crate::keys::{KeyClassification, KeyLabel, LayerGroup};
use crate::model::{forward, KnockoutSpec, ModelWeights, MultimodalInput};
use crate::numerics::Matrix;
use crate::seed;
use crate::synth::{Episode, SyntheticScene, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    None,
    Agnostic,
    Dependent,
    Random,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::None, Condition::Agnostic, Condition::Dependent, Condition::Random];

    pub fn name(self) -> &'static str {
        match self {
            Condition::None => "none",
            Condition::Agnostic => "agnostic",
            Condition::Dependent => "dependent",
            Condition::Random => "random",
        }
    }
}

/// Knockout targets for one condition in one layer group.
///
/// `agnostic` takes every agnostic head of the group. `dependent` and
/// `random` take the same number of heads from the group's layers: dependent
/// heads only, or any head, chosen by `seed`. A group without agnostic heads
/// yields an empty `KnockoutSpec` for every condition.
pub fn build_knockout(
    classification: &KeyClassification,
    group: LayerGroup,
    condition: Condition,
    seed: u64,
) -> Result<KnockoutSpec> {
    let agnostic = classification.heads(group, KeyLabel::Agnostic);
    let count = agnostic.len();
    let mut rng = seed::rng(seed::derive_named(seed, condition.name()));
    let pick = |pool: Vec<(usize, usize)>, rng: &mut rand_chacha::ChaCha8Rng| -> Result<KnockoutSpec> {
        if pool.len() < count {
            return Err(Error::InvalidInput(format!(
                "{} group has {count} agnostic heads but only {} {} candidates",
                group.name(),
                pool.len(),
                condition.name()
            )));
        }
        Ok(KnockoutSpec::new(pool.choose_multiple(rng, count).copied()))
    };
    match condition {
        Condition::None => Ok(KnockoutSpec::default()),
        Condition::Agnostic => Ok(KnockoutSpec::new(agnostic)),
        Condition::Dependent => pick(classification.heads(group, KeyLabel::Dependent), &mut rng),
        Condition::Random => {
            let all: Vec<(usize, usize)> = classification
                .layer_groups
                .range(group)
                .flat_map(|l| (0..classification.n_kv_heads).map(move |h| (l, h)))
                .collect();
            pick(all, &mut rng)
        }
    }
}

/// Linear map from the final residual to `[yes, no]` logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Readout {
    /// `d_model x 2`
    pub weights: Matrix,
    pub bias: [f64; 2],
}

impl Readout {
    /// Gaussian weights of std `1/sqrt(d)`, zero bias.
    pub fn seeded(d_model: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed::derive_named(seed, "readout"));
        let normal = Normal::new(0.0, 1.0 / (d_model as f64).sqrt()).expect("positive std");
        let data = (0..d_model * 2).map(|_| normal.sample(&mut rng)).collect();
        Self { weights: Matrix::new(d_model, 2, data).expect("shape matches data"), bias: [0.0; 2] }
    }

    pub fn logits(&self, residual: &[f64]) -> Result<[f64; 2]> {
        let l = self.weights.vec_mul(residual)?;
        Ok([l[0] + self.bias[0], l[1] + self.bias[1]])
    }

    /// `true` means "yes"; ties answer "no".
    pub fn answer(logits: [f64; 2]) -> bool {
        logits[0] > logits[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExistenceQa {
    pub scene: SyntheticScene,
    pub question: Vec<u32>,
    pub gold: bool,
}

impl ExistenceQa {
    pub fn from_episode(episode: &Episode) -> Result<Vec<Self>> {
        if episode.task != Task::ExistenceQa {
            return Err(Error::InvalidInput(format!("{} episode is not existence QA", episode.task.name())));
        }
        Ok(episode
            .qa
            .iter()
            .map(|q| Self { scene: episode.query[q.scene].clone(), question: q.question.clone(), gold: q.gold })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub index: usize,
    pub gold: bool,
    pub predicted: bool,
    pub logits: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub f1: f64,
    pub accuracy: f64,
    pub n_items: usize,
    pub records: Vec<ItemRecord>,
}

/// F1 on the "yes" class and accuracy. F1 is 0 when there are no true positives.
pub fn f1_accuracy(gold: &[bool], predicted: &[bool]) -> Result<(f64, f64)> {
    if gold.len() != predicted.len() || gold.is_empty() {
        return Err(Error::DimensionMismatch(format!("{} gold labels for {} predictions", gold.len(), predicted.len())));
    }
    let count = |g: bool, p: bool| gold.iter().zip(predicted).filter(|&(&a, &b)| a == g && b == p).count() as f64;
    let (tp, fp, fneg, tn) = (count(true, true), count(false, true), count(true, false), count(false, false));
    let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fneg) };
    Ok((f1, (tp + tn) / gold.len() as f64))
}

/// Answers every item with the knockout applied; items run concurrently and
/// are reported in input order.
pub fn run_existence_eval(
    weights: &ModelWeights,
    readout: &Readout,
    items: &[ExistenceQa],
    spec: &KnockoutSpec,
) -> Result<EvalResult> {
    if items.is_empty() {
        return Err(Error::InvalidInput("no QA items".into()));
    }
    spec.validate(weights)?;
    let records: Vec<ItemRecord> = items
        .par_iter()
        .enumerate()
        .map(|(index, item)| {
            let input = MultimodalInput::new(Vec::new(), item.scene.patches.clone(), item.question.clone())?;
            let out = forward(weights, &input, Some(spec))?;
            let logits = readout.logits(out.final_residual())?;
            Ok(ItemRecord { index, gold: item.gold, predicted: Readout::answer(logits), logits })
        })
        .collect::<Result<_>>()?;
    let gold: Vec<bool> = records.iter().map(|r| r.gold).collect();
    let pred: Vec<bool> = records.iter().map(|r| r.predicted).collect();
    let (f1, accuracy) = f1_accuracy(&gold, &pred)?;
    Ok(EvalResult { f1, accuracy, n_items: records.len(), records })
}

/// One row of an intervention comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionRow {
    pub condition: Condition,
    pub layer_group: LayerGroup,
    pub f1: f64,
    pub accuracy: f64,
    pub n_items: usize,
    pub seed: u64,
}

/// Every condition in every listed group; the `none` row is repeated per group.
pub fn knockout_comparison(
    weights: &ModelWeights,
    readout: &Readout,
    items: &[ExistenceQa],
    classification: &KeyClassification,
    groups: &[LayerGroup],
    seed: u64,
) -> Result<Vec<InterventionRow>> {
    let mut rows = Vec::new();
    for &group in groups {
        for condition in Condition::ALL {
            let spec = build_knockout(classification, group, condition, seed)?;
            let r = run_existence_eval(weights, readout, items, &spec)?;
            rows.push(InterventionRow { condition, layer_group: group, f1: r.f1, accuracy: r.accuracy, n_items: r.n_items, seed });
        }
    }
    Ok(rows)
}

/// CSV with columns `condition,layer_group,f1,accuracy,n_items,seed`.
pub fn intervention_csv(rows: &[InterventionRow]) -> String {
    let mut out = String::from("condition,layer_group,f1,accuracy,n_items,seed\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.condition.name(), r.layer_group.name(), r.f1, r.accuracy, r.n_items, r.seed);
    }
    out
}
