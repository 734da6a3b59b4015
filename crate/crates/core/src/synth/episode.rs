// SPDX-License-Identifier: MIT OR Apache-2.0

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scene::{
    pick_classes, place, random_layout, random_size, render, Color, Palette, Placement, SceneSpec, Shape,
    SyntheticScene,
};
use super::vocab::tokenize;
use crate::error::{Error, Result};
use crate::seed;

/// Number of support scenes in a few-shot segmentation episode.
pub const FG_SEG_SHOTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    FgSeg,
    CoSeg,
    SemSeg,
    RefSeg,
    SemCorr,
    TempCorr,
    ExistenceQa,
}

impl Task {
    pub const ALL: [Task; 7] =
        [Task::FgSeg, Task::CoSeg, Task::SemSeg, Task::RefSeg, Task::SemCorr, Task::TempCorr, Task::ExistenceQa];

    pub fn name(self) -> &'static str {
        match self {
            Task::FgSeg => "fg_seg",
            Task::CoSeg => "co_seg",
            Task::SemSeg => "sem_seg",
            Task::RefSeg => "ref_seg",
            Task::SemCorr => "sem_corr",
            Task::TempCorr => "temp_corr",
            Task::ExistenceQa => "existence_qa",
        }
    }
}

/// Episode dimensions.
///
/// `support` is used by `fg_seg` (must be 5). `query` is the number of
/// scenes for every other task except `temp_corr`, which uses `frames`; for
/// `sem_corr` it is the number of scene pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSizes {
    pub support: usize,
    pub query: usize,
    pub frames: usize,
    pub scene: SceneSpec,
    /// Existence QA: ask about this shape in every item.
    #[serde(default)]
    pub qa_shape: Option<Shape>,
}

impl Default for EpisodeSizes {
    fn default() -> Self {
        Self { support: FG_SEG_SHOTS, query: 4, frames: 4, scene: SceneSpec::default(), qa_shape: None }
    }
}

/// One existence question about `query[scene]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExistenceItem {
    pub scene: usize,
    pub shape: Shape,
    pub question: Vec<u32>,
    pub gold: bool,
}

impl ExistenceItem {
    pub fn question_text(shape: Shape) -> Vec<u32> {
        tokenize(&format!("is there a {} ?", shape.word()))
    }
}

/// Scenes plus task annotations.
///
/// Layout by task:
/// - `fg_seg`: five `support` scenes and `query` scenes sharing the primary class.
/// - `co_seg`: `query` scenes sharing the primary class.
/// - `sem_seg` / `ref_seg`: `query` scenes whose primary object is named by `text`.
/// - `sem_corr`: `support[i]` and `query[i]` form a pair; primary objects share
///   class and size, and keypoint `j` of one corresponds to keypoint `j` of the other.
/// - `temp_corr`: `query` holds the frames in order.
/// - `existence_qa`: `query` scenes with one item each in `qa`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub task: Task,
    pub seed: u64,
    pub support: Vec<SyntheticScene>,
    pub query: Vec<SyntheticScene>,
    pub text: Vec<u32>,
    pub qa: Vec<ExistenceItem>,
}

impl Episode {
    pub fn scenes(&self) -> impl Iterator<Item = &SyntheticScene> {
        self.support.iter().chain(self.query.iter())
    }
}

fn check_sizes(task: Task, sizes: &EpisodeSizes) -> Result<()> {
    let bad = |msg: String| Err(Error::InvalidInput(msg));
    match task {
        Task::FgSeg if sizes.support != FG_SEG_SHOTS || sizes.query == 0 => {
            bad(format!("fg_seg needs {FG_SEG_SHOTS} support and at least 1 query scene"))
        }
        Task::CoSeg if sizes.query < 2 => bad("co_seg needs at least 2 scenes".into()),
        Task::TempCorr if sizes.frames < 2 => bad("temp_corr needs at least 2 frames".into()),
        Task::SemSeg | Task::RefSeg | Task::SemCorr | Task::ExistenceQa if sizes.query == 0 => {
            bad(format!("{} needs at least 1 query scene", task.name()))
        }
        _ if sizes.scene.n_objects == 0 && task != Task::ExistenceQa => {
            bad(format!("{} needs at least one object per scene", task.name()))
        }
        _ if sizes.scene.grid_h == 0 || sizes.scene.grid_w == 0 => bad("empty grid".into()),
        _ => Ok(()),
    }
}

fn primary_class(rng: &mut impl Rng, spec: &SceneSpec) -> Result<(Shape, Color)> {
    Ok(pick_classes(rng, spec, 1, &[])?[0])
}

/// Scene whose primary object has the given class and size; the rest is random.
fn scene_with(
    scene_seed: u64,
    spec: &SceneSpec,
    class: (Shape, Color),
    size: usize,
) -> Result<SyntheticScene> {
    let mut rng = seed::rng(scene_seed);
    let p = place(&mut rng, spec.grid_h, spec.grid_w, &[], class.0, class.1, size)?;
    let layout = random_layout(&mut rng, spec, &[p])?;
    render(&layout, spec.patch_dim)
}

fn class_scenes(ep_seed: u64, offset: u64, n: usize, spec: &SceneSpec, class: (Shape, Color)) -> Result<Vec<SyntheticScene>> {
    (0..n)
        .map(|i| {
            let s = seed::derive(ep_seed, offset + i as u64);
            let size = random_size(&mut seed::rng(seed::derive_named(s, "size")), class.0);
            scene_with(s, spec, class, size)
        })
        .collect()
}

fn temporal_frames(ep_seed: u64, frames: usize, spec: &SceneSpec) -> Result<Vec<SyntheticScene>> {
    let mut rng = seed::rng(seed::derive_named(ep_seed, "frames"));
    let mut layout = random_layout(&mut rng, spec, &[])?;
    let mut out = vec![render(&layout, spec.patch_dim)?];
    for _ in 1..frames {
        let (dr, dc): (isize, isize) = *[(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)].choose(&mut rng).expect("nonempty");
        let b = layout.objects[0].bbox;
        let (row, col) = (b.row as isize + dr, b.col as isize + dc);
        let fits = row >= 0
            && col >= 0
            && row as usize + b.h <= spec.grid_h
            && col as usize + b.w <= spec.grid_w;
        if fits {
            let mut moved = layout.objects[0];
            moved.bbox.row = row as usize;
            moved.bbox.col = col as usize;
            let clear = layout.objects[1..].iter().all(|q| {
                let (a, c) = (&moved.bbox, &q.bbox);
                !(a.row < c.row + c.h && c.row < a.row + a.h && a.col < c.col + c.w && c.col < a.col + a.w)
            });
            if clear {
                layout.objects[0] = moved;
            }
        }
        out.push(render(&layout, spec.patch_dim)?);
    }
    Ok(out)
}

fn existence_scenes(
    ep_seed: u64,
    sizes: &EpisodeSizes,
) -> Result<(Vec<SyntheticScene>, Vec<ExistenceItem>)> {
    let spec = &sizes.scene;
    let allowed = spec.allowed_shapes();
    let mut scenes = Vec::with_capacity(sizes.query);
    let mut items = Vec::with_capacity(sizes.query);
    for i in 0..sizes.query {
        let s = seed::derive(ep_seed, i as u64);
        let mut rng = seed::rng(s);
        let shape = match sizes.qa_shape {
            Some(sh) => sh,
            None => *allowed.choose(&mut rng).expect("nonempty shape set"),
        };
        let gold = i % 2 == 0;
        let scene = if gold {
            let color = match spec.palette {
                Palette::ByShape => Color::of_shape(shape),
                Palette::Random => *Color::ALL.choose(&mut rng).expect("nonempty"),
            };
            let size = random_size(&mut rng, shape);
            let p = place(&mut rng, spec.grid_h, spec.grid_w, &[], shape, color, size)?;
            let with_target = SceneSpec { n_objects: spec.n_objects.max(1), ..spec.clone() };
            render(&random_layout(&mut rng, &with_target, &[p])?, spec.patch_dim)?
        } else {
            let others: Vec<Shape> = allowed.iter().copied().filter(|&x| x != shape).collect();
            if others.is_empty() && spec.n_objects > 0 {
                return Err(Error::InvalidInput(format!("no shapes left to build a scene without {shape:?}")));
            }
            let without = SceneSpec { shapes: others, ..spec.clone() };
            render(&random_layout(&mut rng, &without, &[])?, spec.patch_dim)?
        };
        items.push(ExistenceItem { scene: i, shape, question: ExistenceItem::question_text(shape), gold });
        scenes.push(scene);
    }
    Ok((scenes, items))
}

/// Generates an episode as a pure function of `(task, seed, sizes)`.
pub fn gen_episode(task: Task, seed: u64, sizes: &EpisodeSizes) -> Result<Episode> {
    check_sizes(task, sizes)?;
    let spec = &sizes.scene;
    let mut ep = Episode { task, seed, support: Vec::new(), query: Vec::new(), text: Vec::new(), qa: Vec::new() };
    let mut class_rng = seed::rng(seed::derive_named(seed, "class"));
    match task {
        Task::FgSeg => {
            let class = primary_class(&mut class_rng, spec)?;
            ep.support = class_scenes(seed, 0, sizes.support, spec, class)?;
            ep.query = class_scenes(seed, 1000, sizes.query, spec, class)?;
        }
        Task::CoSeg => {
            let class = primary_class(&mut class_rng, spec)?;
            ep.query = class_scenes(seed, 0, sizes.query, spec, class)?;
        }
        Task::SemSeg | Task::RefSeg => {
            let class = primary_class(&mut class_rng, spec)?;
            ep.query = class_scenes(seed, 0, sizes.query, spec, class)?;
            ep.text = if task == Task::SemSeg {
                tokenize(&format!("{} {}", class.1.word(), class.0.word()))
            } else {
                ep.query[0].referring_expressions[0].text.clone()
            };
        }
        Task::SemCorr => {
            for i in 0..sizes.query {
                let class = primary_class(&mut class_rng, spec)?;
                let size = random_size(&mut class_rng, class.0);
                let pair_seed = seed::derive(seed, i as u64);
                ep.support.push(scene_with(seed::derive(pair_seed, 0), spec, class, size)?);
                ep.query.push(scene_with(seed::derive(pair_seed, 1), spec, class, size)?);
            }
        }
        Task::TempCorr => {
            ep.query = temporal_frames(seed, sizes.frames, spec)?;
        }
        Task::ExistenceQa => {
            let (scenes, items) = existence_scenes(seed, sizes)?;
            ep.query = scenes;
            ep.qa = items;
        }
    }
    Ok(ep)
}

/// Translates a single placement, used by tests that hand-build frames.
impl Placement {
    pub fn shifted(&self, dr: isize, dc: isize) -> Option<Placement> {
        let row = self.bbox.row.checked_add_signed(dr)?;
        let col = self.bbox.col.checked_add_signed(dc)?;
        let mut p = *self;
        p.bbox.row = row;
        p.bbox.col = col;
        Some(p)
    }
}
