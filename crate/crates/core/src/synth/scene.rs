// SPDX-License-Identifier: MIT OR Apache-2.0

use std::sync::{Arc, Mutex, OnceLock};
use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::vocab::tokenize;
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::seed;

/// Side length of a patch in pixels.
pub const PATCH_PIXELS: usize = 4;
const CHANNELS: usize = 3;
const RAW_PATCH_LEN: usize = PATCH_PIXELS * PATCH_PIXELS * CHANNELS;
const PIXEL_PROJECTION_SEED: u64 = 0x5CE9_E5EE_D000_0001;
const BACKGROUND_LEVEL: f64 = 0.5;
const BACKGROUND_NOISE: f64 = 0.05;
const NIGHT_FACTOR: f64 = 0.3;
const PLACEMENT_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Square,
    Disc,
    Bar,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Square, Shape::Disc, Shape::Bar];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Disc => "disc",
            Shape::Bar => "bar",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Cyan,
    Magenta,
}

impl Color {
    pub const ALL: [Color; 6] = [Color::Red, Color::Green, Color::Blue, Color::Yellow, Color::Cyan, Color::Magenta];

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Cyan => "cyan",
            Color::Magenta => "magenta",
        }
    }

    pub fn rgb(self) -> [f64; 3] {
        match self {
            Color::Red => [0.95, 0.1, 0.1],
            Color::Green => [0.1, 0.9, 0.15],
            Color::Blue => [0.1, 0.15, 0.95],
            Color::Yellow => [0.95, 0.9, 0.1],
            Color::Cyan => [0.1, 0.9, 0.9],
            Color::Magenta => [0.9, 0.1, 0.9],
        }
    }

    /// Canonical colour of a shape under [`Palette::ByShape`].
    pub fn of_shape(shape: Shape) -> Color {
        match shape {
            Shape::Square => Color::Red,
            Shape::Disc => Color::Green,
            Shape::Bar => Color::Blue,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    #[default]
    Day,
    Night,
}

impl Domain {
    pub fn word(self) -> &'static str {
        match self {
            Domain::Day => "daytime",
            Domain::Night => "nighttime",
        }
    }

    pub fn other(self) -> Domain {
        match self {
            Domain::Day => Domain::Night,
            Domain::Night => Domain::Day,
        }
    }
}

/// How object colours are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Palette {
    /// Any colour, drawn from the seed.
    #[default]
    Random,
    /// Square is red, disc green, bar blue.
    ByShape,
}

/// Patch-unit bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub row: usize,
    pub col: usize,
    pub h: usize,
    pub w: usize,
}

impl BBox {
    fn overlaps(&self, other: &BBox) -> bool {
        self.row < other.row + other.h
            && other.row < self.row + self.h
            && self.col < other.col + other.w
            && other.col < self.col + self.w
    }

    fn center(&self) -> (f64, f64) {
        (self.row as f64 + self.h as f64 / 2.0, self.col as f64 + self.w as f64 / 2.0)
    }
}

/// One object to draw: shape, colour and where its box sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub shape: Shape,
    pub color: Color,
    pub bbox: BBox,
}

impl Placement {
    /// Box dimensions for a shape of the given size (bars are one patch tall).
    pub fn extent(shape: Shape, size: usize) -> (usize, usize) {
        match shape {
            Shape::Square | Shape::Disc => (size, size),
            Shape::Bar => (1, size),
        }
    }

    pub fn at(shape: Shape, color: Color, size: usize, row: usize, col: usize) -> Self {
        let (h, w) = Self::extent(shape, size);
        Self { shape, color, bbox: BBox { row, col, h, w } }
    }
}

/// Everything needed to render a scene; the first object is the primary one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLayout {
    pub grid_h: usize,
    pub grid_w: usize,
    pub objects: Vec<Placement>,
    pub domain: Domain,
    pub background_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferringExpression {
    pub text: Vec<u32>,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: Color,
    pub bbox: BBox,
    /// `grid_h * grid_w`, row-major.
    pub mask: Vec<bool>,
    /// `(row, col)` patches inside the mask.
    pub keypoints: Vec<(usize, usize)>,
    pub primary: bool,
}

impl SceneObject {
    /// Class name, "{color} {shape}".
    pub fn class_name(&self) -> String {
        format!("{} {}", self.color.word(), self.shape.word())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub grid_h: usize,
    pub grid_w: usize,
    /// `(grid_h * grid_w) x patch_dim`, row-major patch order.
    pub patches: Matrix,
    pub objects: Vec<SceneObject>,
    pub domain: Domain,
    pub caption: Vec<u32>,
    pub referring_expressions: Vec<ReferringExpression>,
    pub layout: SceneLayout,
}

impl SyntheticScene {
    pub fn n_patches(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn primary(&self) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.primary)
    }

    /// Primary-object mask, or all background when the scene is empty.
    pub fn primary_mask(&self) -> Vec<bool> {
        self.primary().map_or_else(|| vec![false; self.n_patches()], |o| o.mask.clone())
    }

    pub fn contains_shape(&self, shape: Shape) -> bool {
        self.objects.iter().any(|o| o.shape == shape)
    }

    pub fn to_json(&self) -> SceneJson {
        SceneJson {
            grid_h: self.grid_h,
            grid_w: self.grid_w,
            domain: self.domain,
            caption: super::detokenize(&self.caption),
            objects: self
                .objects
                .iter()
                .map(|o| ObjectJson {
                    shape: o.shape,
                    color: o.color,
                    bbox: o.bbox,
                    mask_rle: rle_encode(&o.mask),
                    keypoints: o.keypoints.clone(),
                    primary: o.primary,
                })
                .collect(),
        }
    }
}

/// Fixture form of a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneJson {
    pub grid_h: usize,
    pub grid_w: usize,
    pub domain: Domain,
    pub caption: String,
    pub objects: Vec<ObjectJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectJson {
    pub shape: Shape,
    pub color: Color,
    pub bbox: BBox,
    /// Alternating run lengths, starting with a (possibly empty) background run.
    pub mask_rle: String,
    pub keypoints: Vec<(usize, usize)>,
    pub primary: bool,
}

pub fn rle_encode(mask: &[bool]) -> String {
    let mut runs = Vec::new();
    let mut current = false;
    let mut count = 0usize;
    for &m in mask {
        if m == current {
            count += 1;
        } else {
            runs.push(count);
            current = m;
            count = 1;
        }
    }
    runs.push(count);
    runs.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

pub fn rle_decode(rle: &str, len: usize) -> Result<Vec<bool>> {
    let mut out = Vec::with_capacity(len);
    let mut bit = false;
    for part in rle.split(',') {
        let n: usize = part
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad run length {part:?}")))?;
        out.extend(std::iter::repeat_n(bit, n));
        bit = !bit;
    }
    if out.len() != len {
        return Err(Error::InvalidInput(format!("rle covers {} cells, expected {len}", out.len())));
    }
    Ok(out)
}

/// Scene generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub grid_h: usize,
    pub grid_w: usize,
    pub n_objects: usize,
    #[serde(default)]
    pub domain: Domain,
    /// Allowed shapes; empty means all.
    #[serde(default)]
    pub shapes: Vec<Shape>,
    #[serde(default)]
    pub palette: Palette,
    #[serde(default = "default_patch_dim")]
    pub patch_dim: usize,
}

fn default_patch_dim() -> usize {
    RAW_PATCH_LEN
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            grid_h: 8,
            grid_w: 8,
            n_objects: 2,
            domain: Domain::Day,
            shapes: Vec::new(),
            palette: Palette::Random,
            patch_dim: default_patch_dim(),
        }
    }
}

impl SceneSpec {
    pub fn allowed_shapes(&self) -> Vec<Shape> {
        if self.shapes.is_empty() {
            Shape::ALL.to_vec()
        } else {
            let mut s = self.shapes.clone();
            s.sort();
            s.dedup();
            s
        }
    }
}

/// Fixed seeded map from a flattened 4x4x3 pixel patch to `patch_dim`.
pub fn pixel_projection(patch_dim: usize) -> Arc<Matrix> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Matrix>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    guard
        .entry(patch_dim)
        .or_insert_with(|| {
            let mut rng = seed::rng(seed::derive(PIXEL_PROJECTION_SEED, patch_dim as u64));
            let normal = Normal::new(0.0, 1.0 / (RAW_PATCH_LEN as f64).sqrt()).expect("positive std");
            let data = (0..RAW_PATCH_LEN * patch_dim).map(|_| normal.sample(&mut rng)).collect();
            Arc::new(Matrix::new(RAW_PATCH_LEN, patch_dim, data).expect("shape matches data"))
        })
        .clone()
}

fn covers(p: &Placement, py: f64, px: f64) -> bool {
    let b = &p.bbox;
    let y0 = (b.row * PATCH_PIXELS) as f64;
    let x0 = (b.col * PATCH_PIXELS) as f64;
    let hh = (b.h * PATCH_PIXELS) as f64;
    let ww = (b.w * PATCH_PIXELS) as f64;
    let inside_box = py >= y0 && py < y0 + hh && px >= x0 && px < x0 + ww;
    match p.shape {
        Shape::Square | Shape::Bar => inside_box,
        Shape::Disc => {
            let r = hh.min(ww) / 2.0;
            let (cy, cx) = (y0 + hh / 2.0, x0 + ww / 2.0);
            let (dy, dx) = (py + 0.5 - cy, px + 0.5 - cx);
            inside_box && dy * dy + dx * dx <= r * r
        }
    }
}

/// Shading ramps across the object's box with unequal weights on the two
/// axes, so no two patches of an object of side at most 3 look alike.
fn shade(p: &Placement, py: usize, px: usize) -> f64 {
    let b = &p.bbox;
    let u = (px as f64 + 0.5 - (b.col * PATCH_PIXELS) as f64) / (b.w * PATCH_PIXELS) as f64;
    let v = (py as f64 + 0.5 - (b.row * PATCH_PIXELS) as f64) / (b.h * PATCH_PIXELS) as f64;
    0.55 + 0.45 * (3.0 * u + v) / 4.0
}

fn caption_for(objects: &[Placement]) -> Vec<u32> {
    match objects {
        [] => tokenize("a blank image"),
        [only] => tokenize(&format!("a {} {}", only.color.word(), only.shape.word())),
        [first, second, ..] => {
            let (r0, c0) = first.bbox.center();
            let (r1, c1) = second.bbox.center();
            let (dy, dx) = (r0 - r1, c0 - c1);
            let relation = if dx.abs() >= dy.abs() {
                if dx < 0.0 { "left of" } else { "right of" }
            } else if dy < 0.0 {
                "above"
            } else {
                "below"
            };
            tokenize(&format!(
                "a {} {} {} a {} {}",
                first.color.word(),
                first.shape.word(),
                relation,
                second.color.word(),
                second.shape.word()
            ))
        }
    }
}

/// Renders a layout to pixels and patch vectors.
pub fn render(layout: &SceneLayout, patch_dim: usize) -> Result<SyntheticScene> {
    let (gh, gw) = (layout.grid_h, layout.grid_w);
    if gh == 0 || gw == 0 {
        return Err(Error::Generation("empty grid".into()));
    }
    for (i, p) in layout.objects.iter().enumerate() {
        let b = &p.bbox;
        if b.h == 0 || b.w == 0 || b.row + b.h > gh || b.col + b.w > gw {
            return Err(Error::Generation(format!("object {i} box {b:?} outside {gh}x{gw} grid")));
        }
        if layout.objects[..i].iter().any(|q| q.bbox.overlaps(b)) {
            return Err(Error::Generation(format!("object {i} overlaps an earlier object")));
        }
    }
    let (ph, pw) = (gh * PATCH_PIXELS, gw * PATCH_PIXELS);
    let mut pixels = vec![0.0; ph * pw * CHANNELS];
    let mut rng = seed::rng(layout.background_seed);
    let noise = Normal::new(0.0, BACKGROUND_NOISE).expect("positive std");
    for v in pixels.iter_mut() {
        *v = BACKGROUND_LEVEL + noise.sample(&mut rng);
    }
    let mut coverage = vec![vec![0usize; gh * gw]; layout.objects.len()];
    for (oi, p) in layout.objects.iter().enumerate() {
        let rgb = p.color.rgb();
        for py in p.bbox.row * PATCH_PIXELS..(p.bbox.row + p.bbox.h) * PATCH_PIXELS {
            for px in p.bbox.col * PATCH_PIXELS..(p.bbox.col + p.bbox.w) * PATCH_PIXELS {
                if !covers(p, py as f64, px as f64) {
                    continue;
                }
                let s = shade(p, py, px);
                let base = (py * pw + px) * CHANNELS;
                for c in 0..CHANNELS {
                    pixels[base + c] = rgb[c] * s;
                }
                coverage[oi][(py / PATCH_PIXELS) * gw + px / PATCH_PIXELS] += 1;
            }
        }
    }
    if layout.domain == Domain::Night {
        pixels.iter_mut().for_each(|v| *v *= NIGHT_FACTOR);
    }

    let proj = pixel_projection(patch_dim);
    let mut patches = Matrix::zeros(gh * gw, patch_dim);
    let mut raw = vec![0.0; RAW_PATCH_LEN];
    for r in 0..gh {
        for c in 0..gw {
            let mut i = 0;
            for dy in 0..PATCH_PIXELS {
                for dx in 0..PATCH_PIXELS {
                    let base = ((r * PATCH_PIXELS + dy) * pw + c * PATCH_PIXELS + dx) * CHANNELS;
                    raw[i..i + CHANNELS].copy_from_slice(&pixels[base..base + CHANNELS]);
                    i += CHANNELS;
                }
            }
            patches.row_mut(r * gw + c).copy_from_slice(&proj.vec_mul(&raw)?);
        }
    }

    let half = PATCH_PIXELS * PATCH_PIXELS / 2;
    let objects: Vec<SceneObject> = layout
        .objects
        .iter()
        .enumerate()
        .map(|(oi, p)| {
            let mask: Vec<bool> = coverage[oi].iter().map(|&n| n >= half).collect();
            SceneObject {
                shape: p.shape,
                color: p.color,
                bbox: p.bbox,
                keypoints: keypoints(&mask, gw, &p.bbox),
                mask,
                primary: oi == 0,
            }
        })
        .collect();
    let referring_expressions = objects
        .iter()
        .enumerate()
        .map(|(i, o)| ReferringExpression { text: tokenize(&format!("the {}", o.class_name())), target: i })
        .collect();
    Ok(SyntheticScene {
        grid_h: gh,
        grid_w: gw,
        patches,
        caption: caption_for(&layout.objects),
        objects,
        domain: layout.domain,
        referring_expressions,
        layout: layout.clone(),
    })
}

/// First and last mask patch in row-major order, then the mask patch nearest
/// the box centre; duplicates dropped.
fn keypoints(mask: &[bool], gw: usize, bbox: &BBox) -> Vec<(usize, usize)> {
    let cells: Vec<(usize, usize)> = mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| (i / gw, i % gw))
        .collect();
    let (Some(&first), Some(&last)) = (cells.first(), cells.last()) else {
        return Vec::new();
    };
    let (cr, cc) = bbox.center();
    let centre = cells
        .iter()
        .copied()
        .min_by(|a, b| {
            let da = (a.0 as f64 + 0.5 - cr).powi(2) + (a.1 as f64 + 0.5 - cc).powi(2);
            let db = (b.0 as f64 + 0.5 - cr).powi(2) + (b.1 as f64 + 0.5 - cc).powi(2);
            da.total_cmp(&db)
        })
        .unwrap_or(first);
    let mut out = vec![first];
    for kp in [last, centre] {
        if !out.contains(&kp) {
            out.push(kp);
        }
    }
    out
}

/// Random size for a shape: 2-3 patches for squares and discs, 3-4 for bars.
pub(crate) fn random_size(rng: &mut impl Rng, shape: Shape) -> usize {
    match shape {
        Shape::Square | Shape::Disc => rng.random_range(2..=3),
        Shape::Bar => rng.random_range(3..=4),
    }
}

/// Finds a free box position for `(shape, size)`.
pub(crate) fn place(
    rng: &mut impl Rng,
    grid_h: usize,
    grid_w: usize,
    occupied: &[Placement],
    shape: Shape,
    color: Color,
    size: usize,
) -> Result<Placement> {
    let (h, w) = Placement::extent(shape, size);
    if h > grid_h || w > grid_w {
        return Err(Error::Generation(format!("{shape:?} of size {size} does not fit a {grid_h}x{grid_w} grid")));
    }
    for _ in 0..PLACEMENT_ATTEMPTS {
        let p = Placement::at(shape, color, size, rng.random_range(0..=grid_h - h), rng.random_range(0..=grid_w - w));
        if occupied.iter().all(|q| !q.bbox.overlaps(&p.bbox)) {
            return Ok(p);
        }
    }
    Err(Error::Generation(format!("no free position for {shape:?} after {PLACEMENT_ATTEMPTS} attempts")))
}

/// Picks `n` distinct (shape, colour) classes allowed by `spec`.
pub(crate) fn pick_classes(rng: &mut impl Rng, spec: &SceneSpec, n: usize, exclude: &[(Shape, Color)]) -> Result<Vec<(Shape, Color)>> {
    let mut pool: Vec<(Shape, Color)> = Vec::new();
    for s in spec.allowed_shapes() {
        match spec.palette {
            Palette::ByShape => pool.push((s, Color::of_shape(s))),
            Palette::Random => pool.extend(Color::ALL.iter().map(|&c| (s, c))),
        }
    }
    pool.retain(|c| !exclude.contains(c));
    if pool.len() < n {
        return Err(Error::Generation(format!("only {} distinct object classes for {n} objects", pool.len())));
    }
    pool.shuffle(rng);
    pool.truncate(n);
    Ok(pool)
}

/// Random non-overlapping layout following `spec`; `fixed` objects are
/// placed first, unchanged.
pub fn random_layout(rng: &mut impl Rng, spec: &SceneSpec, fixed: &[Placement]) -> Result<SceneLayout> {
    let exclude: Vec<(Shape, Color)> = fixed.iter().map(|p| (p.shape, p.color)).collect();
    let extra = spec.n_objects.saturating_sub(fixed.len());
    let classes = pick_classes(rng, spec, extra, &exclude)?;
    let mut objects = fixed.to_vec();
    for (shape, color) in classes {
        let size = random_size(rng, shape);
        let p = place(rng, spec.grid_h, spec.grid_w, &objects, shape, color, size)?;
        objects.push(p);
    }
    Ok(SceneLayout {
        grid_h: spec.grid_h,
        grid_w: spec.grid_w,
        objects,
        domain: spec.domain,
        background_seed: rng.random(),
    })
}

/// A scene drawn entirely from `seed`.
pub fn gen_scene(seed: u64, spec: &SceneSpec) -> Result<SyntheticScene> {
    let mut rng = seed::rng(seed);
    let layout = random_layout(&mut rng, spec, &[])?;
    render(&layout, spec.patch_dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_scene_is_all_background() {
        let s = gen_scene(3, &SceneSpec { n_objects: 0, ..SceneSpec::default() }).unwrap();
        assert!(s.objects.is_empty());
        assert!(s.primary_mask().iter().all(|&m| !m));
        assert_eq!(super::super::detokenize(&s.caption), "a blank image");
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SceneSpec::default();
        let a = gen_scene(42, &spec).unwrap();
        let b = gen_scene(42, &spec).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.patches, gen_scene(43, &spec).unwrap().patches);
    }

    #[test]
    fn square_at_one_one_covers_four_hand_listed_patches() {
        let layout = SceneLayout {
            grid_h: 8,
            grid_w: 8,
            objects: vec![Placement::at(Shape::Square, Color::Red, 2, 1, 1)],
            domain: Domain::Day,
            background_seed: 0,
        };
        let s = render(&layout, 48).unwrap();
        let set: Vec<usize> = s.objects[0].mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
        assert_eq!(set, vec![9, 10, 17, 18]);
        assert_eq!(s.objects[0].keypoints, vec![(1, 1), (2, 2)]);
    }

    #[test]
    fn keypoints_lie_in_masks() {
        for seed in 0..50 {
            let s = gen_scene(seed, &SceneSpec { n_objects: 3, ..SceneSpec::default() }).unwrap();
            assert_eq!(s.objects.iter().filter(|o| o.primary).count(), 1);
            for o in &s.objects {
                assert!(!o.keypoints.is_empty());
                for &(r, c) in &o.keypoints {
                    assert!(o.mask[r * s.grid_w + c]);
                }
            }
        }
    }

    #[test]
    fn night_scales_pixels_before_projection() {
        let mut layout = SceneLayout {
            grid_h: 4,
            grid_w: 4,
            objects: vec![Placement::at(Shape::Disc, Color::Cyan, 2, 0, 0)],
            domain: Domain::Day,
            background_seed: 9,
        };
        let day = render(&layout, 48).unwrap();
        layout.domain = Domain::Night;
        let night = render(&layout, 48).unwrap();
        for (d, n) in day.patches.data().iter().zip(night.patches.data()) {
            assert!((d * 0.3 - n).abs() < 1e-12);
        }
    }

    #[test]
    fn overfull_grid_fails() {
        let spec = SceneSpec { grid_h: 2, grid_w: 2, n_objects: 3, ..SceneSpec::default() };
        assert!(matches!(gen_scene(0, &spec), Err(Error::Generation(_))));
    }

    #[test]
    fn rle_round_trip() {
        let m = vec![false, false, true, true, true, false, true];
        let s = rle_encode(&m);
        assert_eq!(s, "2,3,1,1");
        assert_eq!(rle_decode(&s, 7).unwrap(), m);
        assert_eq!(rle_encode(&[true, false]), "0,1,1");
        assert!(rle_decode("1,1", 3).is_err());
    }

    #[test]
    fn json_export_carries_masks() {
        let s = gen_scene(5, &SceneSpec::default()).unwrap();
        let j = s.to_json();
        let text = serde_json::to_string(&j).unwrap();
        let back: SceneJson = serde_json::from_str(&text).unwrap();
        assert_eq!(back, j);
        for (o, oj) in s.objects.iter().zip(&j.objects) {
            assert_eq!(rle_decode(&oj.mask_rle, 64).unwrap(), o.mask);
        }
    }
}
