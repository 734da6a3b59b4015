// SPDX-License-Identifier: MIT OR Apache-2.0

//! Config-driven experiment runner, paired accounting and the run manifest.
//!
//! A run reads one JSON [`RunConfig`], writes its CSV/JSON artifacts into an
//! output directory, then writes `manifest.json` listing every artifact with
//! its SHA-256. Artifacts are byte-for-byte functions of the config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::interventions::{
    intervention_csv, knockout_comparison, planted_noise_study_with, run_existence_eval, ExistenceQa, NoiseStudyConfig,
    Readout,
};
use crate::keys::{classify_keys, export_key_pca, pca_csv, variance_csv, variance_map, LayerGroup};
use crate::model::{build_model, KnockoutSpec, ModelConfig, ModelWeights, PlantSpec};
use crate::numerics::dot;
use crate::prefix::{kv_delta, planted_prefix_model, prefix_csv, prefix_study, HeadSelection, PrefixCondition, PrefixKind};
use crate::probes::{
    image_values, layer_head_sweep, otsu_threshold, planted_probe_model, probe_csv, scene_cache, text_class_vector,
    PROBE_HEADS,
};
use crate::seed;
use crate::synth::{gen_episode, gen_scene, tokenize, Episode, EpisodeSizes, SyntheticScene, Task};

pub const MANIFEST_FILE: &str = "manifest.json";

/// 2x2 tally of two predictors over the same items.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedAccount {
    pub both_correct: usize,
    pub value_only: usize,
    pub model_only: usize,
    pub both_wrong: usize,
    pub n: usize,
    /// Fraction answered correctly by at least one of the two.
    pub union_accuracy: f64,
}

pub fn paired_account(model_correct: &[bool], value_correct: &[bool]) -> Result<PairedAccount> {
    if model_correct.len() != value_correct.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} model outcomes against {} value outcomes",
            model_correct.len(),
            value_correct.len()
        )));
    }
    if model_correct.is_empty() {
        return Err(Error::InvalidInput("paired account needs at least one item".into()));
    }
    let mut a = PairedAccount { both_correct: 0, value_only: 0, model_only: 0, both_wrong: 0, n: model_correct.len(), union_accuracy: 0.0 };
    for (&m, &v) in model_correct.iter().zip(value_correct) {
        match (m, v) {
            (true, true) => a.both_correct += 1,
            (false, true) => a.value_only += 1,
            (true, false) => a.model_only += 1,
            (false, false) => a.both_wrong += 1,
        }
    }
    a.union_accuracy = (a.both_correct + a.value_only + a.model_only) as f64 / a.n as f64;
    Ok(a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Sweep,
    Variance,
    Knockout,
    Prefix,
    Paired,
    PcaExport,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Sweep => "sweep",
            Experiment::Variance => "variance",
            Experiment::Knockout => "knockout",
            Experiment::Prefix => "prefix",
            Experiment::Paired => "paired",
            Experiment::PcaExport => "pca-export",
        }
    }
}

/// Where the model weights come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    /// Seeded Gaussian weights, optionally with planted agnostic keys.
    Random {
        #[serde(default)]
        config: ModelConfig,
        #[serde(default)]
        plant: Option<PlantSpec>,
    },
    /// Weights saved by [`ModelWeights::save_json`].
    Weights { path: PathBuf },
    PlantedProbe {
        #[serde(default)]
        config: ModelConfig,
    },
    PlantedPrefix {
        #[serde(default)]
        config: ModelConfig,
    },
    /// Planted-noise study; only meaningful for `knockout`.
    PlantedNoise {
        #[serde(default)]
        config: ModelConfig,
    },
}

impl Default for ModelSource {
    fn default() -> Self {
        ModelSource::Random { config: ModelConfig::default(), plant: None }
    }
}

impl ModelSource {
    pub fn load(&self, run_seed: u64) -> Result<ModelWeights> {
        match self {
            ModelSource::Random { config, plant } => build_model(config, plant.as_ref()),
            ModelSource::Weights { path } => ModelWeights::load_json(path),
            ModelSource::PlantedProbe { config } => planted_probe_model(config),
            ModelSource::PlantedPrefix { config } => planted_prefix_model(config),
            ModelSource::PlantedNoise { config } => {
                let study = NoiseStudyConfig { seed: run_seed, ..NoiseStudyConfig::default() };
                Ok(crate::interventions::planted_noise_model(config, &study)?.weights)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "default_task")]
    pub task: Task,
    #[serde(default = "default_n_episodes")]
    pub n_episodes: usize,
    #[serde(default)]
    pub sizes: EpisodeSizes,
    /// Scenes for variance maps and PCA export.
    #[serde(default = "default_n_scenes")]
    pub n_scenes: usize,
    /// Existence-QA items for knockout and paired runs.
    #[serde(default = "default_n_items")]
    pub n_items: usize,
}

fn default_task() -> Task {
    Task::FgSeg
}
fn default_n_episodes() -> usize {
    2
}
fn default_n_scenes() -> usize {
    16
}
fn default_n_items() -> usize {
    200
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            task: default_task(),
            n_episodes: default_n_episodes(),
            sizes: EpisodeSizes::default(),
            n_scenes: default_n_scenes(),
            n_items: default_n_items(),
        }
    }
}

/// One experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSource,
    #[serde(default)]
    pub data: DataConfig,
    /// Manual key-variance threshold; bimodal split otherwise.
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Prefix runs: how the probed head is chosen.
    #[serde(default)]
    pub head_selection: HeadSelection,
    /// Head read by `paired` and `pca-export`.
    #[serde(default = "default_head")]
    pub head: (usize, usize),
    /// PCA components for `pca-export`.
    #[serde(default = "default_components")]
    pub components: usize,
}

fn default_head() -> (usize, usize) {
    PROBE_HEADS.color
}
fn default_components() -> usize {
    2
}

impl RunConfig {
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            seed: 0,
            model: ModelSource::default(),
            data: DataConfig::default(),
            threshold: None,
            output_dir: None,
            head_selection: HeadSelection::default(),
            head: default_head(),
            components: default_components(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::RunConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::RunConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::RunConfig(m));
        if let ModelSource::Weights { path } = &self.model {
            if !path.is_file() {
                return bad(format!("weights file {} does not exist", path.display()));
            }
        }
        if let Some(t) = self.threshold {
            if !t.is_finite() || t < 0.0 {
                return bad(format!("threshold {t} must be finite and non-negative"));
            }
        }
        let d = &self.data;
        if d.n_episodes == 0 || d.n_scenes == 0 || d.n_items == 0 {
            return bad("n_episodes, n_scenes and n_items must be positive".into());
        }
        if self.components == 0 {
            return bad("components must be positive".into());
        }
        match self.experiment {
            Experiment::Sweep if d.task == Task::ExistenceQa => bad("sweep cannot probe existence_qa".into()),
            Experiment::Prefix if !matches!(d.task, Task::SemSeg | Task::RefSeg | Task::SemCorr) => {
                bad(format!("prefix runs need sem_seg, ref_seg or sem_corr, not {}", d.task.name()))
            }
            Experiment::PcaExport if self.components > d.n_scenes * d.sizes.scene.grid_h * d.sizes.scene.grid_w => {
                bad("more components than pooled keys".into())
            }
            _ => Ok(()),
        }
    }

    /// Hash of the config with `output_dir` cleared, so the same experiment
    /// written to two places hashes the same.
    pub fn sha256(&self) -> String {
        let canonical = RunConfig { output_dir: None, ..self.clone() };
        sha256_hex(&serde_json::to_vec(&canonical).expect("config serialises"))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub artifacts: Vec<ArtifactEntry>,
    pub seed: u64,
    pub version: String,
}

impl Manifest {
    /// Re-hashes every listed artifact under `dir`.
    pub fn verify(&self, dir: &Path) -> Result<bool> {
        for a in &self.artifacts {
            if sha256_hex(&std::fs::read(dir.join(&a.path))?) != a.sha256 {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Artifacts produced in memory; written in name order.
type Artifacts = BTreeMap<String, Vec<u8>>;

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

fn data_seed(cfg: &RunConfig, label: &str) -> u64 {
    seed::derive_named(seed::derive_named(cfg.seed, cfg.experiment.name()), label)
}

fn episodes(cfg: &RunConfig, task: Task, n: usize) -> Result<Vec<Episode>> {
    let s = data_seed(cfg, task.name());
    (0..n as u64).map(|i| gen_episode(task, seed::derive(s, i), &cfg.data.sizes)).collect()
}

fn scenes(cfg: &RunConfig) -> Result<Vec<SyntheticScene>> {
    let s = data_seed(cfg, "scenes");
    (0..cfg.data.n_scenes as u64).map(|i| gen_scene(seed::derive(s, i), &cfg.data.sizes.scene)).collect()
}

fn qa_episode(cfg: &RunConfig) -> Result<Episode> {
    let sizes = EpisodeSizes { query: cfg.data.n_items, ..cfg.data.sizes.clone() };
    gen_episode(Task::ExistenceQa, data_seed(cfg, "qa"), &sizes)
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    task: Task,
    per_layer_max: &'a [f64],
    best_layer: usize,
    best_kv_head: usize,
    best_value: f64,
}

fn run_sweep(cfg: &RunConfig, w: &ModelWeights, out: &mut Artifacts) -> Result<()> {
    let eps = episodes(cfg, cfg.data.task, cfg.data.n_episodes)?;
    let sweep = layer_head_sweep(w, &eps, cfg.data.task)?;
    out.insert("sweep.csv".into(), probe_csv(&sweep.grid).into_bytes());
    let summary = SweepSummary {
        task: sweep.task,
        per_layer_max: &sweep.per_layer_max,
        best_layer: sweep.global_max.layer,
        best_kv_head: sweep.global_max.kv_head,
        best_value: sweep.global_max.value,
    };
    out.insert("sweep_summary.json".into(), json_bytes(&summary)?);
    Ok(())
}

fn run_variance(cfg: &RunConfig, w: &ModelWeights, out: &mut Artifacts) -> Result<()> {
    let vmap = variance_map(w, &scenes(cfg)?)?;
    let classification = classify_keys(&vmap, cfg.threshold)?;
    out.insert("variance.csv".into(), variance_csv(&vmap, Some(&classification)).into_bytes());
    out.insert("classification.json".into(), json_bytes(&classification)?);
    Ok(())
}

fn run_knockout(cfg: &RunConfig, w: &ModelWeights, out: &mut Artifacts) -> Result<()> {
    if let ModelSource::PlantedNoise { config } = &cfg.model {
        let study = NoiseStudyConfig {
            seed: cfg.seed,
            n_items: cfg.data.n_items,
            n_variance_scenes: cfg.data.n_scenes,
            ..NoiseStudyConfig::default()
        };
        let report = planted_noise_study_with(config, &study)?;
        out.insert("interventions.csv".into(), intervention_csv(&report.rows).into_bytes());
        out.insert("classification.json".into(), json_bytes(&report.classification)?);
        return Ok(());
    }
    let vmap = variance_map(w, &scenes(cfg)?)?;
    let classification = classify_keys(&vmap, cfg.threshold)?;
    let readout = Readout::seeded(w.config.d_model, data_seed(cfg, "readout"));
    let items = ExistenceQa::from_episode(&qa_episode(cfg)?)?;
    let rows = knockout_comparison(w, &readout, &items, &classification, &LayerGroup::ALL, cfg.seed)?;
    out.insert("interventions.csv".into(), intervention_csv(&rows).into_bytes());
    out.insert("classification.json".into(), json_bytes(&classification)?);
    Ok(())
}

fn run_prefix(cfg: &RunConfig, w: &ModelWeights, out: &mut Artifacts) -> Result<()> {
    let eps = episodes(cfg, cfg.data.task, cfg.data.n_episodes)?;
    let rows = prefix_study(w, &eps, cfg.head_selection)?;
    out.insert("prefix.csv".into(), prefix_csv(&rows).into_bytes());
    let scene = eps[0].scenes().next().ok_or_else(|| Error::InvalidInput("episode has no scenes".into()))?;
    let mut csv = String::from("condition,layer,kv_head,delta\n");
    for kind in PrefixKind::ALL {
        let d = kv_delta(w, scene, &PrefixCondition::for_scene(kind, scene)?)?;
        for l in 0..d.n_layers {
            for h in 0..d.n_kv_heads {
                let _ = writeln!(csv, "{},{l},{h},{}", kind.name(), d.get(l, h));
            }
        }
    }
    out.insert("kv_delta.csv".into(), csv.into_bytes());
    Ok(())
}

/// Value-side answer to "is there a {shape}": the best image patch's dot
/// product with the shape word's text value, thresholded by Otsu over all
/// items. An all-equal score set answers "yes" everywhere.
fn value_answers(w: &ModelWeights, episode: &Episode, (layer, kv_head): (usize, usize)) -> Result<Vec<bool>> {
    w.check_head(layer, kv_head)?;
    let mut scores = Vec::with_capacity(episode.qa.len());
    for item in &episode.qa {
        let class = text_class_vector(w, &tokenize(item.shape.word()), layer, kv_head)?;
        let values = image_values(&scene_cache(w, &episode.query[item.scene], &[])?, layer, kv_head)?;
        scores.push(values.row_iter().map(|v| dot(&class, v)).fold(f64::NEG_INFINITY, f64::max));
    }
    Ok(match otsu_threshold(&scores) {
        Some(t) => scores.iter().map(|&s| s > t).collect(),
        None => vec![true; scores.len()],
    })
}

fn run_paired(cfg: &RunConfig, w: &ModelWeights, out: &mut Artifacts) -> Result<()> {
    let episode = qa_episode(cfg)?;
    let items = ExistenceQa::from_episode(&episode)?;
    let readout = Readout::seeded(w.config.d_model, data_seed(cfg, "readout"));
    let model = run_existence_eval(w, &readout, &items, &KnockoutSpec::default())?;
    let value = value_answers(w, &episode, cfg.head)?;
    let model_correct: Vec<bool> = model.records.iter().map(|r| r.predicted == r.gold).collect();
    let value_correct: Vec<bool> = value.iter().zip(&items).map(|(&v, i)| v == i.gold).collect();
    let account = paired_account(&model_correct, &value_correct)?;
    let mut csv = String::from("item,gold,model_correct,value_correct\n");
    for (i, item) in items.iter().enumerate() {
        let _ = writeln!(csv, "{i},{},{},{}", item.gold, model_correct[i], value_correct[i]);
    }
    out.insert("paired.csv".into(), csv.into_bytes());
    out.insert("paired.json".into(), json_bytes(&account)?);
    Ok(())
}

fn run_pca(cfg: &RunConfig, w: &ModelWeights, out: &mut Artifacts) -> Result<()> {
    let sc = scenes(cfg)?;
    let coords = export_key_pca(w, &sc, cfg.head.0, cfg.head.1, cfg.components)?;
    out.insert("pca.csv".into(), pca_csv(&coords, cfg.data.sizes.scene.grid_w).into_bytes());
    Ok(())
}

/// Runs the experiment and writes its artifacts and manifest into `out_dir`.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let weights = cfg.model.load(cfg.seed)?;
    let mut artifacts = Artifacts::new();
    match cfg.experiment {
        Experiment::Sweep => run_sweep(cfg, &weights, &mut artifacts)?,
        Experiment::Variance => run_variance(cfg, &weights, &mut artifacts)?,
        Experiment::Knockout => run_knockout(cfg, &weights, &mut artifacts)?,
        Experiment::Prefix => run_prefix(cfg, &weights, &mut artifacts)?,
        Experiment::Paired => run_paired(cfg, &weights, &mut artifacts)?,
        Experiment::PcaExport => run_pca(cfg, &weights, &mut artifacts)?,
    }
    artifacts.insert("config.json".into(), json_bytes(&RunConfig { output_dir: None, ..cfg.clone() })?);
    std::fs::create_dir_all(out_dir)?;
    let mut entries = Vec::with_capacity(artifacts.len());
    for (name, bytes) in &artifacts {
        std::fs::write(out_dir.join(name), bytes)?;
        entries.push(ArtifactEntry { path: name.clone(), sha256: sha256_hex(bytes) });
    }
    let manifest = Manifest {
        config_sha256: cfg.sha256(),
        artifacts: entries,
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    std::fs::write(out_dir.join(MANIFEST_FILE), json_bytes(&manifest)?)?;
    Ok(manifest)
}
