// SPDX-License-Identifier: MIT OR Apache-2.0

//! Probing procedures over cached image values.
//!
//! Every probe reads value vectors exactly as they sit in the KV cache,
//! before any output projection. Each probe has a value-level form that
//! takes matrices directly and a model-level form that runs the forward
//! passes first.

mod metrics;
mod planted;

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{
    boundary, boundary_f, iou, j_and_f, otsu_segment, otsu_threshold, pck, pck_hit, PCK_ALPHA,
};
pub use planted::{planted_probe_model, ProbeHeads, PROBE_HEADS};

use crate::error::{Error, Result};
use crate::model::{forward, KvCache, ModelWeights, MultimodalInput};
use crate::numerics::{cosine, dot, logistic_fit, LogisticConfig, Matrix};
use crate::seed;
use crate::synth::{Episode, SyntheticScene, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "mIoU")]
    MIoU,
    #[serde(rename = "J_m")]
    Jm,
    #[serde(rename = "PCK")]
    Pck,
    #[serde(rename = "JandF")]
    JandF,
    #[serde(rename = "accuracy")]
    Accuracy,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::MIoU => "mIoU",
            Metric::Jm => "J_m",
            Metric::Pck => "PCK",
            Metric::JandF => "JandF",
            Metric::Accuracy => "accuracy",
        }
    }

    pub fn for_task(task: Task) -> Metric {
        match task {
            Task::FgSeg | Task::SemSeg | Task::RefSeg => Metric::MIoU,
            Task::CoSeg => Metric::Jm,
            Task::SemCorr => Metric::Pck,
            Task::TempCorr => Metric::JandF,
            Task::ExistenceQa => Metric::Accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub task: Task,
    pub layer: usize,
    pub kv_head: usize,
    pub metric: Metric,
    pub value: f64,
    pub n_episodes: usize,
    /// Notes such as `degenerate_support` or the chosen co-segmentation cluster.
    #[serde(default)]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReadout {
    pub query: Vec<f64>,
    pub options: Vec<Vec<f64>>,
    /// Cosine to the query; an option or query pooling to zero scores -1.
    pub similarities: Vec<f64>,
    pub chosen: usize,
}

/// Values of one scene paired with a ground-truth mask.
#[derive(Debug, Clone, Copy)]
pub struct Labeled<'a> {
    pub values: &'a Matrix,
    pub mask: &'a [bool],
}

fn check_rows(values: &Matrix, mask: &[bool]) -> Result<()> {
    if values.rows() != mask.len() {
        return Err(Error::DimensionMismatch(format!("{} value rows for a mask of {}", values.rows(), mask.len())));
    }
    Ok(())
}

fn standardizer(data: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let mean = data.mean_row();
    let n = data.rows() as f64;
    let std = (0..data.cols())
        .map(|c| {
            let var = data.row_iter().map(|r| (r[c] - mean[c]).powi(2)).sum::<f64>() / n;
            if var > 1e-24 { var.sqrt() } else { 1.0 }
        })
        .collect();
    (mean, std)
}

fn standardize(data: &Matrix, mean: &[f64], std: &[f64]) -> Matrix {
    let mut out = data.clone();
    for r in 0..out.rows() {
        for ((v, m), s) in out.row_mut(r).iter_mut().zip(mean).zip(std) {
            *v = (*v - m) / s;
        }
    }
    out
}

/// Few-shot foreground segmentation: a logistic probe on the support patches
/// (features standardised with support statistics), thresholded at 0.5 on
/// every query patch. Returns mean foreground IoU over the queries and flags.
pub fn fg_seg_from_values(support: &[Labeled<'_>], query: &[Labeled<'_>]) -> Result<(f64, Vec<String>)> {
    if support.is_empty() || query.is_empty() {
        return Err(Error::InvalidInput("foreground probe needs support and query scenes".into()));
    }
    for s in support.iter().chain(query) {
        check_rows(s.values, s.mask)?;
    }
    let parts: Vec<&Matrix> = support.iter().map(|s| s.values).collect();
    let features = Matrix::vstack(&parts)?;
    let labels: Vec<bool> = support.iter().flat_map(|s| s.mask.iter().copied()).collect();
    let mut flags = Vec::new();
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        flags.push("degenerate_support".to_string());
    }
    let (mean, std) = standardizer(&features);
    let model = logistic_fit(&standardize(&features, &mean, &std), &labels, &LogisticConfig::default())?;
    let mut total = 0.0;
    for q in query {
        let z = standardize(q.values, &mean, &std);
        let pred: Vec<bool> = z.row_iter().map(|x| model.predict(x)).collect();
        total += iou(&pred, q.mask)?;
    }
    Ok((total / query.len() as f64, flags))
}

/// Co-segmentation: 2-means over the union of all scenes' values, scored
/// under both cluster-to-foreground assignments; the better mean Jaccard is
/// returned with the chosen foreground cluster. When every value row is the
/// same the clustering is a single constant cluster.
pub fn co_seg_from_values(scenes: &[Labeled<'_>], kmeans_seed: u64) -> Result<(f64, usize)> {
    if scenes.len() < 2 {
        return Err(Error::InvalidInput("co-segmentation needs at least two scenes".into()));
    }
    for s in scenes {
        check_rows(s.values, s.mask)?;
    }
    let parts: Vec<&Matrix> = scenes.iter().map(|s| s.values).collect();
    let data = Matrix::vstack(&parts)?;
    let first = data.row(0);
    let labels = if data.row_iter().all(|r| r == first) {
        vec![0; data.rows()]
    } else {
        crate::numerics::kmeans(&data, 2, kmeans_seed)?.labels
    };
    let mut best = (f64::NEG_INFINITY, 0);
    for fg in 0..2 {
        let mut offset = 0;
        let mut total = 0.0;
        for s in scenes {
            let n = s.mask.len();
            let pred: Vec<bool> = labels[offset..offset + n].iter().map(|&l| l == fg).collect();
            total += iou(&pred, s.mask)?;
            offset += n;
        }
        let jm = total / scenes.len() as f64;
        if jm > best.0 {
            best = (jm, fg);
        }
    }
    Ok(best)
}

/// Dot-product segmentation by a class vector, split by Otsu's rule.
pub fn text_seg_from_values(class_vector: &[f64], values: &Matrix, target: &[bool]) -> Result<f64> {
    check_rows(values, target)?;
    if class_vector.len() != values.cols() {
        return Err(Error::DimensionMismatch(format!(
            "class vector of {} for values of width {}",
            class_vector.len(),
            values.cols()
        )));
    }
    let scores: Vec<f64> = values.row_iter().map(|v| dot(class_vector, v)).collect();
    iou(&otsu_segment(&scores), target)
}

/// Row of `candidates` with the highest cosine to `query`; ties go to the
/// lowest index and zero vectors score -1.
pub fn nearest_by_cosine(query: &[f64], candidates: &Matrix) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, c) in candidates.row_iter().enumerate() {
        let s = cosine(query, c).unwrap_or(-1.0);
        if s > best.1 {
            best = (i, s);
        }
    }
    best.0
}

/// PCK of nearest-neighbour matches for `(source, target)` keypoint pairs.
pub fn sem_corr_from_values(
    source: &Matrix,
    target: &Matrix,
    keypoints: &[((usize, usize), (usize, usize))],
    grid_h: usize,
    grid_w: usize,
) -> Result<f64> {
    let n = grid_h * grid_w;
    if source.rows() != n || target.rows() != n {
        return Err(Error::DimensionMismatch(format!("value rows do not match a {grid_h}x{grid_w} grid")));
    }
    let mut pairs = Vec::with_capacity(keypoints.len());
    for &(src, truth) in keypoints {
        if src.0 >= grid_h || src.1 >= grid_w {
            return Err(Error::OutOfRange(format!("keypoint {src:?} outside the grid")));
        }
        let hit = nearest_by_cosine(source.row(src.0 * grid_w + src.1), target);
        pairs.push(((hit / grid_w, hit % grid_w), truth));
    }
    Ok(pck(&pairs, grid_h, grid_w, PCK_ALPHA))
}

/// Propagates a frame-0 mask frame by frame: each patch of frame `t` takes the
/// label of its nearest neighbour in frame `t - 1`. Returns final-frame labels.
pub fn propagate_labels(frames: &[&Matrix], init: &[bool]) -> Result<Vec<bool>> {
    let Some(first) = frames.first() else {
        return Err(Error::InvalidInput("no frames".into()));
    };
    check_rows(first, init)?;
    let mut labels = init.to_vec();
    for w in frames.windows(2) {
        let (prev, cur) = (w[0], w[1]);
        labels = cur.row_iter().map(|v| labels[nearest_by_cosine(v, prev)]).collect();
    }
    Ok(labels)
}

/// Mask propagation scored against the final-frame mask: `(J, F, J&F)`.
pub fn temp_corr_from_values(
    frames: &[&Matrix],
    init: &[bool],
    gt_final: &[bool],
    grid_h: usize,
    grid_w: usize,
) -> Result<(f64, f64, f64)> {
    if frames.len() < 2 {
        return Err(Error::InvalidInput("temporal correspondence needs at least two frames".into()));
    }
    let pred = propagate_labels(frames, init)?;
    j_and_f(&pred, gt_final, grid_h, grid_w)
}

/// Mean-pools each scene's values and picks the option most cosine-similar
/// to the query.
pub fn pooled_similarity_from_values(query: &Matrix, options: &[&Matrix]) -> Result<SimilarityReadout> {
    if options.len() < 2 {
        return Err(Error::InvalidInput("similarity readout needs at least two options".into()));
    }
    let q = query.mean_row();
    let pooled: Vec<Vec<f64>> = options.iter().map(|o| o.mean_row()).collect();
    for p in &pooled {
        if p.len() != q.len() {
            return Err(Error::DimensionMismatch("options and query differ in value width".into()));
        }
    }
    let similarities: Vec<f64> = pooled.iter().map(|p| cosine(&q, p).unwrap_or(-1.0)).collect();
    let mut chosen = 0;
    for (i, &s) in similarities.iter().enumerate() {
        if s > similarities[chosen] {
            chosen = i;
        }
    }
    Ok(SimilarityReadout { query: q, options: pooled, similarities, chosen })
}

/// Cache of a forward pass over `prefix ++ image`.
pub fn scene_cache(weights: &ModelWeights, scene: &SyntheticScene, prefix: &[u32]) -> Result<KvCache> {
    let input = MultimodalInput::new(prefix.to_vec(), scene.patches.clone(), Vec::new())?;
    Ok(forward(weights, &input, None)?.cache)
}

/// Image-span values of a cache at one head.
pub fn image_values(cache: &KvCache, layer: usize, kv_head: usize) -> Result<Matrix> {
    cache.values_in(layer, kv_head, cache.spans().image.clone())
}

/// Value of the final token of a text-only pass; no image is involved.
pub fn text_class_vector(weights: &ModelWeights, text: &[u32], layer: usize, kv_head: usize) -> Result<Vec<f64>> {
    text_cache(weights, text).and_then(|c| last_value(&c, layer, kv_head))
}

fn text_cache(weights: &ModelWeights, text: &[u32]) -> Result<KvCache> {
    if text.is_empty() {
        return Err(Error::InvalidInput("empty text".into()));
    }
    Ok(forward(weights, &MultimodalInput::text_only(text.to_vec()), None)?.cache)
}

fn last_value(cache: &KvCache, layer: usize, kv_head: usize) -> Result<Vec<f64>> {
    let n = cache.len(layer, kv_head);
    Ok(cache.values_in(layer, kv_head, n - 1..n)?.row(0).to_vec())
}

fn keypoint_pairs(source: &SyntheticScene, target: &SyntheticScene) -> Result<Vec<((usize, usize), (usize, usize))>> {
    let (Some(a), Some(b)) = (source.primary(), target.primary()) else {
        return Err(Error::InvalidInput("correspondence scenes need a primary object".into()));
    };
    if a.keypoints.is_empty() {
        return Err(Error::InvalidInput("source scene has no keypoints".into()));
    }
    Ok(a.keypoints.iter().copied().zip(b.keypoints.iter().copied()).collect())
}

/// Forward caches for every scene of an episode, computed once and shared by
/// all `(layer, kv_head)` cells.
pub struct EpisodeValues<'a> {
    pub episode: &'a Episode,
    support: Vec<KvCache>,
    query: Vec<KvCache>,
    text: Option<KvCache>,
}

impl<'a> EpisodeValues<'a> {
    /// Runs the forward passes; `prefix` is placed before every image.
    pub fn compute(weights: &ModelWeights, episode: &'a Episode, prefix: &[u32]) -> Result<Self> {
        if episode.task == Task::ExistenceQa {
            return Err(Error::InvalidInput("existence_qa episodes are not probed".into()));
        }
        let run = |scenes: &[SyntheticScene]| -> Result<Vec<KvCache>> {
            scenes.par_iter().map(|s| scene_cache(weights, s, prefix)).collect()
        };
        let support = run(&episode.support)?;
        let query = run(&episode.query)?;
        let text = match episode.task {
            Task::SemSeg | Task::RefSeg => Some(text_cache(weights, &episode.text)?),
            _ => None,
        };
        Ok(Self { episode, support, query, text })
    }

    /// Episode metric at one head, with flags.
    pub fn score(&self, layer: usize, kv_head: usize) -> Result<(f64, Vec<String>)> {
        let ep = self.episode;
        let vals = |caches: &[KvCache]| -> Result<Vec<Matrix>> {
            caches.iter().map(|c| image_values(c, layer, kv_head)).collect()
        };
        match ep.task {
            Task::FgSeg => {
                let (sv, qv) = (vals(&self.support)?, vals(&self.query)?);
                let sm: Vec<Vec<bool>> = ep.support.iter().map(SyntheticScene::primary_mask).collect();
                let qm: Vec<Vec<bool>> = ep.query.iter().map(SyntheticScene::primary_mask).collect();
                let s: Vec<Labeled> = sv.iter().zip(&sm).map(|(v, m)| Labeled { values: v, mask: m }).collect();
                let q: Vec<Labeled> = qv.iter().zip(&qm).map(|(v, m)| Labeled { values: v, mask: m }).collect();
                fg_seg_from_values(&s, &q)
            }
            Task::CoSeg => {
                let qv = vals(&self.query)?;
                let qm: Vec<Vec<bool>> = ep.query.iter().map(SyntheticScene::primary_mask).collect();
                let s: Vec<Labeled> = qv.iter().zip(&qm).map(|(v, m)| Labeled { values: v, mask: m }).collect();
                let (jm, fg) = co_seg_from_values(&s, seed::derive_named(ep.seed, "kmeans"))?;
                Ok((jm, vec![format!("fg_cluster={fg}")]))
            }
            Task::SemSeg | Task::RefSeg => {
                let text = self.text.as_ref().ok_or_else(|| Error::InvalidInput("episode has no text".into()))?;
                let class = last_value(text, layer, kv_head)?;
                let mut total = 0.0;
                for (c, s) in self.query.iter().zip(&ep.query) {
                    total += text_seg_from_values(&class, &image_values(c, layer, kv_head)?, &s.primary_mask())?;
                }
                Ok((total / ep.query.len() as f64, Vec::new()))
            }
            Task::SemCorr => {
                let (mut hits, mut total) = (0.0, 0usize);
                for i in 0..ep.query.len() {
                    let (src, tgt) = (&ep.support[i], &ep.query[i]);
                    let pairs = keypoint_pairs(src, tgt)?;
                    let p = sem_corr_from_values(
                        &image_values(&self.support[i], layer, kv_head)?,
                        &image_values(&self.query[i], layer, kv_head)?,
                        &pairs,
                        src.grid_h,
                        src.grid_w,
                    )?;
                    hits += p * pairs.len() as f64;
                    total += pairs.len();
                }
                Ok((hits / total as f64, Vec::new()))
            }
            Task::TempCorr => {
                let fv = vals(&self.query)?;
                let frames: Vec<&Matrix> = fv.iter().collect();
                let first = &ep.query[0];
                let last = &ep.query[ep.query.len() - 1];
                let (_, _, jf) =
                    temp_corr_from_values(&frames, &first.primary_mask(), &last.primary_mask(), first.grid_h, first.grid_w)?;
                Ok((jf, Vec::new()))
            }
            Task::ExistenceQa => Err(Error::InvalidInput("existence_qa episodes are not probed".into())),
        }
    }
}

fn expect_task(episode: &Episode, tasks: &[Task]) -> Result<()> {
    if !tasks.contains(&episode.task) {
        return Err(Error::InvalidInput(format!("probe does not accept {} episodes", episode.task.name())));
    }
    Ok(())
}

fn single(task: Task, layer: usize, kv_head: usize, (value, flags): (f64, Vec<String>)) -> ProbeResult {
    ProbeResult { task, layer, kv_head, metric: Metric::for_task(task), value, n_episodes: 1, flags }
}

fn probe_episode(weights: &ModelWeights, episode: &Episode, layer: usize, kv_head: usize) -> Result<ProbeResult> {
    weights.check_head(layer, kv_head)?;
    let ev = EpisodeValues::compute(weights, episode, &[])?;
    Ok(single(episode.task, layer, kv_head, ev.score(layer, kv_head)?))
}

pub fn probe_fg_seg(weights: &ModelWeights, episode: &Episode, layer: usize, kv_head: usize) -> Result<ProbeResult> {
    expect_task(episode, &[Task::FgSeg])?;
    probe_episode(weights, episode, layer, kv_head)
}

pub fn probe_co_seg(weights: &ModelWeights, episode: &Episode, layer: usize, kv_head: usize) -> Result<ProbeResult> {
    expect_task(episode, &[Task::CoSeg])?;
    probe_episode(weights, episode, layer, kv_head)
}

/// Segments `scene` by the class vector of `text`, scored against the
/// primary object's mask.
pub fn probe_text_seg(
    weights: &ModelWeights,
    scene: &SyntheticScene,
    text: &[u32],
    layer: usize,
    kv_head: usize,
) -> Result<ProbeResult> {
    weights.check_head(layer, kv_head)?;
    let class = text_class_vector(weights, text, layer, kv_head)?;
    let values = image_values(&scene_cache(weights, scene, &[])?, layer, kv_head)?;
    let v = text_seg_from_values(&class, &values, &scene.primary_mask())?;
    Ok(single(Task::SemSeg, layer, kv_head, (v, Vec::new())))
}

/// Matches the primary object's keypoints from `source` into `target`.
pub fn probe_sem_corr(
    weights: &ModelWeights,
    source: &SyntheticScene,
    target: &SyntheticScene,
    layer: usize,
    kv_head: usize,
) -> Result<ProbeResult> {
    weights.check_head(layer, kv_head)?;
    let pairs = keypoint_pairs(source, target)?;
    let sv = image_values(&scene_cache(weights, source, &[])?, layer, kv_head)?;
    let tv = image_values(&scene_cache(weights, target, &[])?, layer, kv_head)?;
    let v = sem_corr_from_values(&sv, &tv, &pairs, source.grid_h, source.grid_w)?;
    Ok(single(Task::SemCorr, layer, kv_head, (v, Vec::new())))
}

/// Propagates frame 0's primary mask through `frames`.
pub fn probe_temp_corr(weights: &ModelWeights, frames: &[SyntheticScene], layer: usize, kv_head: usize) -> Result<ProbeResult> {
    weights.check_head(layer, kv_head)?;
    if frames.len() < 2 {
        return Err(Error::InvalidInput("temporal correspondence needs at least two frames".into()));
    }
    let values: Vec<Matrix> = frames
        .par_iter()
        .map(|f| scene_cache(weights, f, &[]).and_then(|c| image_values(&c, layer, kv_head)))
        .collect::<Result<_>>()?;
    let refs: Vec<&Matrix> = values.iter().collect();
    let (first, last) = (&frames[0], &frames[frames.len() - 1]);
    let (_, _, jf) = temp_corr_from_values(&refs, &first.primary_mask(), &last.primary_mask(), first.grid_h, first.grid_w)?;
    Ok(single(Task::TempCorr, layer, kv_head, (jf, Vec::new())))
}

pub fn pooled_similarity_choice(
    weights: &ModelWeights,
    query: &SyntheticScene,
    options: &[SyntheticScene],
    layer: usize,
    kv_head: usize,
) -> Result<SimilarityReadout> {
    weights.check_head(layer, kv_head)?;
    let qv = image_values(&scene_cache(weights, query, &[])?, layer, kv_head)?;
    let ov: Vec<Matrix> = options
        .iter()
        .map(|o| scene_cache(weights, o, &[]).and_then(|c| image_values(&c, layer, kv_head)))
        .collect::<Result<_>>()?;
    let refs: Vec<&Matrix> = ov.iter().collect();
    pooled_similarity_from_values(&qv, &refs)
}

/// Probe results over every `(layer, kv_head)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub task: Task,
    /// Layer-major: cell `(l, h)` sits at `l * n_kv_heads + h`.
    pub grid: Vec<ProbeResult>,
    pub per_layer_max: Vec<f64>,
    /// Best cell; the first in grid order on ties.
    pub global_max: ProbeResult,
}

/// Mean metric over episodes at one head.
pub fn score_episodes(values: &[EpisodeValues<'_>], layer: usize, kv_head: usize) -> Result<ProbeResult> {
    let Some(first) = values.first() else {
        return Err(Error::InvalidInput("no episodes".into()));
    };
    let task = first.episode.task;
    let mut total = 0.0;
    let mut flags = BTreeSet::new();
    for ev in values {
        if ev.episode.task != task {
            return Err(Error::InvalidInput("episodes of mixed tasks".into()));
        }
        let (v, f) = ev.score(layer, kv_head)?;
        total += v;
        flags.extend(f);
    }
    Ok(ProbeResult {
        task,
        layer,
        kv_head,
        metric: Metric::for_task(task),
        value: total / values.len() as f64,
        n_episodes: values.len(),
        flags: flags.into_iter().collect(),
    })
}

/// Grid over precomputed episode values.
pub fn sweep_values(values: &[EpisodeValues<'_>], n_layers: usize, n_kv_heads: usize) -> Result<SweepResult> {
    let cells: Vec<(usize, usize)> = (0..n_layers).flat_map(|l| (0..n_kv_heads).map(move |h| (l, h))).collect();
    let grid: Vec<ProbeResult> = cells.par_iter().map(|&(l, h)| score_episodes(values, l, h)).collect::<Result<_>>()?;
    let per_layer_max = grid
        .chunks(n_kv_heads)
        .map(|row| row.iter().map(|r| r.value).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut best = &grid[0];
    for r in &grid {
        if r.value > best.value {
            best = r;
        }
    }
    Ok(SweepResult { task: grid[0].task, global_max: best.clone(), grid, per_layer_max })
}

/// Runs `episodes` (all of `task`) through the model once and probes every cell.
pub fn layer_head_sweep(weights: &ModelWeights, episodes: &[Episode], task: Task) -> Result<SweepResult> {
    if episodes.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one episode".into()));
    }
    if let Some(e) = episodes.iter().find(|e| e.task != task) {
        return Err(Error::InvalidInput(format!("{} episode in a {} sweep", e.task.name(), task.name())));
    }
    let values: Vec<EpisodeValues> =
        episodes.iter().map(|e| EpisodeValues::compute(weights, e, &[])).collect::<Result<_>>()?;
    sweep_values(&values, weights.config.n_layers, weights.config.n_kv_heads)
}

/// CSV with columns `task,layer,kv_head,metric,value,n_episodes`.
pub fn probe_csv(results: &[ProbeResult]) -> String {
    let mut out = String::from("task,layer,kv_head,metric,value,n_episodes\n");
    for r in results {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.task.name(), r.layer, r.kv_head, r.metric.name(), r.value, r.n_episodes);
    }
    out
}
