//! Deterministic synthetic street scenes: frontal boxes standing on a flat
//! ground plane seen by a pinhole camera, rendered into an instance mask,
//! Stixels, generator ground truth and noisy detector boxes.
//!
//! Conventions: the principal point is `(width / 2, horizon)`, the camera sits
//! `camera_height` meters above the ground, and an object at depth `Z` whose
//! base is on the ground spans rows `horizon + f (H_cam - H_obj) / Z` to
//! `horizon + f H_cam / Z`. A Stixel's `(x, z)` is the object surface point
//! under the Stixel's column center, `y` is the height of the Stixel's
//! bottom edge above the ground, and `w`, `h` are its pixel extent scaled
//! back to meters at depth `z`.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::Rect;
use crate::ingest::{Dataset, InstanceMask, Sample};
use crate::types::{ClassId, ClassTable, DetectionBox, InstanceId, InstanceLabeling, Stixel, StixelFrame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectClassSpec {
    pub class: String,
    /// Inclusive range of objects per frame.
    pub count: (u32, u32),
    pub width: (f64, f64),
    pub height: (f64, f64),
}

impl ObjectClassSpec {
    fn new(class: &str, count: (u32, u32), width: (f64, f64), height: (f64, f64)) -> Self {
        ObjectClassSpec {
            class: class.to_string(),
            count,
            width,
            height,
        }
    }
}

/// Imperfections of the Stixel extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StixelNoise {
    /// Standard deviation of the vertical Stixel boundaries, pixels.
    pub boundary_jitter: f64,
    /// Probability that two touching segments of a column become one Stixel.
    pub merge_probability: f64,
    /// Relative depth noise.
    pub depth_noise: f64,
    /// Probability that a Stixel's semantic label is replaced.
    pub label_flip: f64,
}

impl Default for StixelNoise {
    fn default() -> Self {
        StixelNoise {
            boundary_jitter: 0.0,
            merge_probability: 0.0,
            depth_noise: 0.03,
            label_flip: 0.05,
        }
    }
}

impl StixelNoise {
    pub fn none() -> Self {
        StixelNoise {
            boundary_jitter: 0.0,
            merge_probability: 0.0,
            depth_noise: 0.0,
            label_flip: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub width: u32,
    pub height: u32,
    pub focal_length: f64,
    pub camera_height: f64,
    /// Image row of the horizon; defaults to the image center row.
    pub horizon: Option<f64>,
    pub column_width: u32,
    pub depth: (f64, f64),
    pub objects: Vec<ObjectClassSpec>,
    /// Background structures (buildings, poles, vegetation) producing
    /// background Stixels.
    pub structures: (u32, u32),
    pub structure_width: (f64, f64),
    pub structure_height: (f64, f64),
    pub structure_depth: (f64, f64),
    /// Probability that an object is placed laterally next to an earlier one
    /// so that the two overlap in the image.
    pub occlusion_probability: f64,
    /// Snap object edges to Stixel column boundaries, which makes Stixels
    /// pixel-exact when combined with zero boundary jitter and merging.
    pub snap_to_columns: bool,
    /// Split column segments taller than this many pixels into equal
    /// pieces.
    pub split_height: Option<u32>,
    pub stixel_noise: StixelNoise,
    pub classes: ClassTable,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 1024,
            height: 512,
            focal_length: 1130.0,
            camera_height: 1.2,
            horizon: None,
            column_width: 8,
            depth: (7.0, 60.0),
            objects: vec![
                ObjectClassSpec::new("person", (0, 4), (0.45, 0.7), (1.5, 1.95)),
                ObjectClassSpec::new("rider", (0, 1), (0.6, 0.9), (1.6, 2.0)),
                ObjectClassSpec::new("car", (1, 5), (1.7, 4.5), (1.35, 1.65)),
                ObjectClassSpec::new("truck", (0, 1), (2.3, 6.0), (2.8, 3.6)),
                ObjectClassSpec::new("bus", (0, 1), (2.5, 10.0), (2.9, 3.3)),
                ObjectClassSpec::new("train", (0, 0), (2.9, 15.0), (3.6, 4.0)),
                ObjectClassSpec::new("motorcycle", (0, 1), (0.7, 2.0), (1.1, 1.4)),
                ObjectClassSpec::new("bicycle", (0, 2), (0.6, 1.8), (1.0, 1.3)),
            ],
            structures: (3, 7),
            structure_width: (1.0, 10.0),
            structure_height: (3.0, 12.0),
            structure_depth: (15.0, 80.0),
            occlusion_probability: 0.3,
            snap_to_columns: true,
            split_height: None,
            stixel_noise: StixelNoise::default(),
            classes: ClassTable::cityscapes(),
        }
    }
}

impl SceneConfig {
    /// Pixel-exact Stixels, no depth or label noise.
    pub fn exact() -> Self {
        SceneConfig {
            stixel_noise: StixelNoise::none(),
            ..SceneConfig::default()
        }
    }

    /// Stixels that do not line up with the mask: unsnapped object edges,
    /// jittered vertical boundaries and occasional under-segmentation.
    pub fn noisy() -> Self {
        SceneConfig {
            snap_to_columns: false,
            stixel_noise: StixelNoise {
                boundary_jitter: 3.0,
                merge_probability: 0.15,
                ..StixelNoise::default()
            },
            ..SceneConfig::default()
        }
    }

    /// No objects and no structures.
    pub fn empty() -> Self {
        let mut cfg = SceneConfig::default();
        for o in &mut cfg.objects {
            o.count = (0, 0);
        }
        cfg.structures = (0, 0);
        cfg
    }

    pub fn horizon_row(&self) -> f64 {
        self.horizon.unwrap_or(self.height as f64 / 2.0)
    }

    pub fn principal_u(&self) -> f64 {
        self.width as f64 / 2.0
    }

    pub fn columns(&self) -> u32 {
        self.width.div_ceil(self.column_width)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.width == 0 || self.height == 0 || self.column_width == 0 {
            return bad("image size and column width must be positive".into());
        }
        if !(self.focal_length > 0.0) || !(self.camera_height > 0.0) {
            return bad("focal length and camera height must be positive".into());
        }
        let range = |name: &str, (a, b): (f64, f64), lo: f64| -> Result<()> {
            if !(a.is_finite() && b.is_finite() && a <= b && a > lo) {
                return Err(Error::Parameter(format!("{name} range {a}..{b} is invalid")));
            }
            Ok(())
        };
        range("depth", self.depth, 0.0)?;
        range("structure width", self.structure_width, 0.0)?;
        range("structure height", self.structure_height, 0.0)?;
        range("structure depth", self.structure_depth, 0.0)?;
        if self.structures.0 > self.structures.1 {
            return bad("structure count range is empty".into());
        }
        for o in &self.objects {
            match self.classes.index_of(&o.class) {
                Some(c) if self.classes.is_thing(c) => {}
                _ => return bad(format!("unknown object class {:?}", o.class)),
            }
            if o.count.0 > o.count.1 {
                return bad(format!("{} count range is empty", o.class));
            }
            range(&format!("{} width", o.class), o.width, 0.0)?;
            range(&format!("{} height", o.class), o.height, 0.0)?;
        }
        if self.split_height == Some(0) {
            return bad("split height must be positive".into());
        }
        if self.classes.background_class().is_none() {
            return bad("class table needs a stuff class for background Stixels".into());
        }
        let n = &self.stixel_noise;
        for (name, p) in [
            ("occlusion probability", self.occlusion_probability),
            ("merge probability", n.merge_probability),
            ("label flip", n.label_flip),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if !(n.boundary_jitter >= 0.0) || !(n.depth_noise >= 0.0) {
            return bad("noise standard deviations must be >= 0".into());
        }
        self.classes.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorNoise {
    /// Standard deviation of the center offset, as a fraction of box size.
    pub center_jitter: f64,
    /// Standard deviation of the log scale factor.
    pub scale_jitter: f64,
    /// Mean scale factor; values below 1 emulate boxes that are too tight.
    pub scale_bias: f64,
    /// Miss probability per class, indexed by class; missing entries use
    /// `default_miss_rate`.
    pub miss_rate: Vec<f64>,
    pub default_miss_rate: f64,
    /// Expected number of false positives per frame (at most one is drawn
    /// per unit; the fractional part is a probability).
    pub false_positive_rate: f64,
    pub conf_base: f64,
    pub conf_jitter_weight: f64,
    pub conf_occlusion_weight: f64,
    pub conf_noise: f64,
    /// Confidence range of false positives.
    pub false_positive_conf: (f64, f64),
}

impl Default for DetectorNoise {
    fn default() -> Self {
        DetectorNoise {
            center_jitter: 0.05,
            scale_jitter: 0.08,
            scale_bias: 0.95,
            miss_rate: Vec::new(),
            default_miss_rate: 0.1,
            false_positive_rate: 0.5,
            conf_base: 0.9,
            conf_jitter_weight: 1.0,
            conf_occlusion_weight: 0.4,
            conf_noise: 0.05,
            false_positive_conf: (0.2, 0.7),
        }
    }
}

impl DetectorNoise {
    /// Exact tight boxes with confidence 1, no misses, no false positives.
    pub fn none() -> Self {
        DetectorNoise {
            center_jitter: 0.0,
            scale_jitter: 0.0,
            scale_bias: 1.0,
            miss_rate: Vec::new(),
            default_miss_rate: 0.0,
            false_positive_rate: 0.0,
            conf_base: 1.0,
            conf_jitter_weight: 0.0,
            conf_occlusion_weight: 0.0,
            conf_noise: 0.0,
            false_positive_conf: (0.5, 0.5),
        }
    }

    pub fn miss(&self, class: ClassId) -> f64 {
        self.miss_rate.get(class).copied().unwrap_or(self.default_miss_rate)
    }

    pub fn validate(&self) -> Result<()> {
        for &r in self.miss_rate.iter().chain([&self.default_miss_rate]) {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Parameter(format!("miss rate {r} outside [0, 1]")));
            }
        }
        if !(self.false_positive_rate >= 0.0) {
            return Err(Error::Parameter("false-positive rate must be >= 0".into()));
        }
        for s in [self.center_jitter, self.scale_jitter, self.conf_noise] {
            if !(s >= 0.0) {
                return Err(Error::Parameter("standard deviations must be >= 0".into()));
            }
        }
        if !(self.scale_bias > 0.0) {
            return Err(Error::Parameter("scale bias must be positive".into()));
        }
        let (a, b) = self.false_positive_conf;
        if !(0.0 <= a && a <= b && b <= 1.0) {
            return Err(Error::Parameter("false-positive confidence range invalid".into()));
        }
        Ok(())
    }
}

/// A box standing on the ground. `class` is a thing class or the stuff class
/// used for background structures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneObject {
    pub class: ClassId,
    pub x: f64,
    pub z: f64,
    pub width: f64,
    pub height: f64,
}

/// An object that is visible in the rendered mask.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibleObject {
    /// Index into the scene's object list.
    pub object: usize,
    pub class: ClassId,
    pub code: u16,
    /// Generator ground-truth id, `None` when the object has no Stixel.
    pub instance: Option<InstanceId>,
    /// Bounding rectangle of the object's mask pixels.
    pub mask_rect: Rect,
    pub visible_pixels: usize,
    /// Pixels of the projected box inside the image, before occlusion.
    pub box_pixels: usize,
}

impl VisibleObject {
    pub fn occlusion(&self) -> f64 {
        if self.box_pixels == 0 {
            0.0
        } else {
            1.0 - self.visible_pixels as f64 / self.box_pixels as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    pub frame: StixelFrame,
    pub mask: InstanceMask,
    pub gt: InstanceLabeling,
    pub objects: Vec<SceneObject>,
    pub visible: Vec<VisibleObject>,
}

fn gauss<R: Rng>(rng: &mut R, sd: f64) -> f64 {
    if sd == 0.0 {
        0.0
    } else {
        let z: f64 = StandardNormal.sample(rng);
        z * sd
    }
}

fn uniform<R: Rng>(rng: &mut R, (a, b): (f64, f64)) -> f64 {
    if a == b {
        a
    } else {
        rng.random_range(a..b)
    }
}

/// Random number generator of frame `index` of the run seeded by `seed`;
/// `purpose` separates the scene stream from the detector stream.
pub fn frame_rng(seed: u64, index: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index * 2 + purpose);
    rng
}

/// Draw the objects and background structures of one scene.
pub fn sample_scene<R: Rng>(config: &SceneConfig, rng: &mut R) -> Vec<SceneObject> {
    let f = config.focal_length;
    let half_fov = config.principal_u() / f;
    let mut objects: Vec<SceneObject> = Vec::new();
    for spec in &config.objects {
        let class = config.classes.index_of(&spec.class).expect("validated class");
        let n = rng.random_range(spec.count.0..=spec.count.1);
        for _ in 0..n {
            let z = uniform(rng, config.depth);
            let width = uniform(rng, spec.width);
            let height = uniform(rng, spec.height);
            let things: Vec<&SceneObject> = objects.iter().filter(|o| config.classes.is_thing(o.class)).collect();
            let x = if !things.is_empty() && rng.random_bool(config.occlusion_probability) {
                let other = things[rng.random_range(0..things.len())];
                other.x + uniform(rng, (-0.6, 0.6)) * (other.width + width)
            } else {
                uniform(rng, (-0.95, 0.95)) * half_fov * z
            };
            objects.push(SceneObject {
                class,
                x,
                z,
                width,
                height,
            });
        }
    }
    let stuff = config.classes.background_class().expect("validated stuff class");
    let n = rng.random_range(config.structures.0..=config.structures.1);
    for _ in 0..n {
        let z = uniform(rng, config.structure_depth);
        objects.push(SceneObject {
            class: stuff,
            x: uniform(rng, (-1.0, 1.0)) * half_fov * z,
            z,
            width: uniform(rng, config.structure_width),
            height: uniform(rng, config.structure_height),
        });
    }
    objects
}

/// Integer pixel extent `[u0, u1) x [v0, v1)` of an object, or `None` when it
/// does not reach the image.
pub fn project(config: &SceneConfig, o: &SceneObject) -> Option<(u32, u32, u32, u32)> {
    let f = config.focal_length;
    let cu = config.principal_u();
    let cv = config.horizon_row();
    let (w, h) = (config.width as f64, config.height as f64);
    let mut ul = cu + f * (o.x - o.width / 2.0) / o.z;
    let mut ur = cu + f * (o.x + o.width / 2.0) / o.z;
    if config.snap_to_columns {
        let cw = config.column_width as f64;
        ul = (ul / cw).round() * cw;
        ur = (ur / cw).round() * cw;
        if ur <= ul {
            ur = ul + cw;
        }
    } else {
        ul = ul.round();
        ur = ur.round();
    }
    let vt = (cv + f * (config.camera_height - o.height) / o.z).round();
    let vb = (cv + f * config.camera_height / o.z).round();
    let (u0, u1) = (ul.clamp(0.0, w), ur.clamp(0.0, w));
    let (v0, v1) = (vt.clamp(0.0, h), vb.clamp(0.0, h));
    (u1 > u0 && v1 > v0).then_some((u0 as u32, v0 as u32, u1 as u32, v1 as u32))
}

/// Per-pixel index (+1) of the nearest object, 0 where no object is visible.
pub fn z_buffer(config: &SceneConfig, objects: &[SceneObject]) -> Vec<u16> {
    let (w, h) = (config.width as usize, config.height as usize);
    let mut owner = vec![0u16; w * h];
    let mut order: Vec<usize> = (0..objects.len()).collect();
    // Far to near; the nearest object is painted last.
    order.sort_by(|&a, &b| objects[b].z.total_cmp(&objects[a].z).then(a.cmp(&b)));
    for i in order {
        if let Some((u0, v0, u1, v1)) = project(config, &objects[i]) {
            for v in v0 as usize..v1 as usize {
                owner[v * w + u0 as usize..v * w + u1 as usize].fill(i as u16 + 1);
            }
        }
    }
    owner
}

#[derive(Debug, Clone, Copy)]
struct Run {
    owner: usize,
    v0: i64,
    v1: i64,
}

fn column_runs(owner: &[u16], width: usize, height: usize, column: usize) -> Vec<Run> {
    let mut runs: Vec<Run> = Vec::new();
    for v in 0..height {
        let o = owner[v * width + column];
        if o == 0 {
            continue;
        }
        match runs.last_mut() {
            Some(r) if r.owner == o as usize - 1 && r.v1 == v as i64 => r.v1 += 1,
            _ => runs.push(Run {
                owner: o as usize - 1,
                v0: v as i64,
                v1: v as i64 + 1,
            }),
        }
    }
    runs
}

fn split_runs(runs: Vec<Run>, max: Option<u32>) -> Vec<Run> {
    let Some(max) = max else { return runs };
    let max = i64::from(max);
    let mut out = Vec::with_capacity(runs.len());
    for r in runs {
        let len = r.v1 - r.v0;
        let pieces = (len + max - 1) / max;
        for k in 0..pieces {
            out.push(Run {
                owner: r.owner,
                v0: r.v0 + len * k / pieces,
                v1: r.v0 + len * (k + 1) / pieces,
            });
        }
    }
    out
}

fn perturb_runs<R: Rng>(runs: Vec<Run>, noise: &StixelNoise, height: i64, rng: &mut R) -> Vec<Run> {
    let mut merged: Vec<Run> = Vec::with_capacity(runs.len());
    for r in runs {
        if let Some(prev) = merged.last_mut() {
            if prev.v1 == r.v0 && noise.merge_probability > 0.0 && rng.random_bool(noise.merge_probability) {
                if r.v1 - r.v0 > prev.v1 - prev.v0 {
                    prev.owner = r.owner;
                }
                prev.v1 = r.v1;
                continue;
            }
        }
        merged.push(r);
    }
    if noise.boundary_jitter == 0.0 {
        return merged;
    }
    let mut out: Vec<Run> = Vec::with_capacity(merged.len());
    let mut shared: Option<(i64, i64)> = None;
    for r in merged {
        let top = match shared {
            Some((orig, jittered)) if orig == r.v0 => jittered,
            _ => r.v0 + gauss(rng, noise.boundary_jitter).round() as i64,
        };
        let bottom = r.v1 + gauss(rng, noise.boundary_jitter).round() as i64;
        shared = Some((r.v1, bottom));
        let floor = out.last().map_or(0, |p: &Run| p.v1);
        let v0 = top.clamp(floor, height);
        let v1 = bottom.clamp(0, height);
        if v1 > v0 {
            out.push(Run { owner: r.owner, v0, v1 });
        }
    }
    out
}

/// Render a scene: mask, Stixels and generator ground truth.
pub fn render_scene<R: Rng>(config: &SceneConfig, objects: &[SceneObject], frame_id: u64, rng: &mut R) -> SynthFrame {
    let classes = &config.classes;
    let (w, h) = (config.width as usize, config.height as usize);
    let owner = z_buffer(config, objects);

    let mut visible_pixels = vec![0usize; objects.len()];
    let mut bounds: Vec<Option<(usize, usize, usize, usize)>> = vec![None; objects.len()];
    for v in 0..h {
        for u in 0..w {
            let o = owner[v * w + u];
            if o == 0 {
                continue;
            }
            let i = o as usize - 1;
            visible_pixels[i] += 1;
            let b = bounds[i].get_or_insert((u, v, u + 1, v + 1));
            b.0 = b.0.min(u);
            b.1 = b.1.min(v);
            b.2 = b.2.max(u + 1);
            b.3 = b.3.max(v + 1);
        }
    }

    let mut codes = vec![0u16; objects.len()];
    let mut per_class: BTreeMap<ClassId, u16> = BTreeMap::new();
    for (i, o) in objects.iter().enumerate() {
        if visible_pixels[i] > 0 && classes.is_thing(o.class) {
            let k = per_class.entry(o.class).or_insert(0);
            codes[i] = classes.classes[o.class].mask_id as u16 * 1000 + *k;
            *k += 1;
        }
    }
    let mask = InstanceMask {
        width: w,
        height: h,
        codes: owner
            .iter()
            .map(|&o| if o == 0 { 0 } else { codes[o as usize - 1] })
            .collect(),
    };

    let noise = &config.stixel_noise;
    let f = config.focal_length;
    let cu = config.principal_u();
    let cv = config.horizon_row();
    let cw = config.column_width as usize;
    let stuff = classes.background_class().expect("validated stuff class");
    let label_pool: Vec<ClassId> = {
        let mut v: Vec<ClassId> = classes.things().map(|c| classes.merged(c)).collect();
        v.push(stuff);
        v.sort_unstable();
        v.dedup();
        v
    };
    let mut stixels = Vec::new();
    let mut stixel_owner = Vec::new();
    for col in 0..config.columns() as usize {
        let u0 = col * cw;
        let u1 = (u0 + cw).min(w);
        let rep = u0 + (u1 - u0 - 1) / 2;
        let runs = split_runs(column_runs(&owner, w, h, rep), config.split_height);
        let runs = perturb_runs(runs, noise, h as i64, rng);
        for r in runs {
            let o = &objects[r.owner];
            let z = (o.z * (1.0 + gauss(rng, noise.depth_noise))).max(0.1);
            let uc = (u0 + u1) as f64 / 2.0;
            let true_label = if classes.is_thing(o.class) { classes.merged(o.class) } else { stuff };
            let (label, label_conf) = if noise.label_flip > 0.0 && rng.random_bool(noise.label_flip) {
                let others: Vec<ClassId> = label_pool.iter().copied().filter(|&c| c != true_label).collect();
                let l = others.get(rng.random_range(0..others.len().max(1))).copied().unwrap_or(true_label);
                (l, rng.random_range(0.4..0.8))
            } else {
                (true_label, rng.random_range(0.7..1.0))
            };
            stixels.push(Stixel {
                stixel_id: stixels.len() as u32,
                x: (uc - cu) * z / f,
                y: config.camera_height - (r.v1 as f64 - cv) * z / f,
                z,
                w: (u1 - u0) as f64 * z / f,
                h: (r.v1 - r.v0) as f64 * z / f,
                u_tl: u0 as f64,
                v_tl: r.v0 as f64,
                u_br: u1 as f64,
                v_br: r.v1 as f64,
                label,
                label_conf,
            });
            stixel_owner.push(r.owner);
        }
    }

    // Dense per-class counters over objects that own at least one Stixel,
    // in mask-code order.
    let mut owned: Vec<usize> = stixel_owner.iter().copied().filter(|&i| codes[i] != 0).collect();
    owned.sort_unstable_by_key(|&i| codes[i]);
    owned.dedup();
    let mut instance_of: BTreeMap<usize, InstanceId> = BTreeMap::new();
    let mut counters: BTreeMap<ClassId, u32> = BTreeMap::new();
    for i in owned {
        let c = counters.entry(objects[i].class).or_insert(0);
        instance_of.insert(i, InstanceId::object(objects[i].class, *c));
        *c += 1;
    }
    let mut gt = InstanceLabeling::new(frame_id);
    for (s, &o) in stixels.iter().zip(&stixel_owner) {
        gt.labels
            .insert(s.stixel_id, instance_of.get(&o).copied().unwrap_or(InstanceId::Background));
    }

    let visible = (0..objects.len())
        .filter(|&i| codes[i] != 0)
        .map(|i| {
            let (u0, v0, u1, v1) = bounds[i].expect("visible object has bounds");
            let box_pixels = project(config, &objects[i])
                .map_or(0, |(a, b, c, d)| (c - a) as usize * (d - b) as usize);
            VisibleObject {
                object: i,
                class: objects[i].class,
                code: codes[i],
                instance: instance_of.get(&i).copied(),
                mask_rect: Rect::new(u0 as f64, v0 as f64, u1 as f64, v1 as f64),
                visible_pixels: visible_pixels[i],
                box_pixels,
            }
        })
        .collect();

    SynthFrame {
        frame: StixelFrame::new(frame_id, config.width, config.height, stixels),
        mask,
        gt,
        objects: objects.to_vec(),
        visible,
    }
}

/// Generate frame `index` of the run seeded by `seed`.
pub fn generate_indexed(config: &SceneConfig, seed: u64, index: u64) -> SynthFrame {
    let mut rng = frame_rng(seed, index, 0);
    let objects = sample_scene(config, &mut rng);
    render_scene(config, &objects, index, &mut rng)
}

/// Generate a single frame (index 0) from `seed`.
pub fn generate_frame(config: &SceneConfig, seed: u64) -> Result<SynthFrame> {
    config.validate()?;
    Ok(generate_indexed(config, seed, 0))
}

/// Detector boxes for the frame's ground-truth instances plus false
/// positives. Box labels are merged classes.
pub fn simulate_detections<R: Rng>(
    sf: &SynthFrame,
    classes: &ClassTable,
    noise: &DetectorNoise,
    rng: &mut R,
) -> Vec<DetectionBox> {
    let (w, h) = (sf.frame.width as f64, sf.frame.height as f64);
    let mut out = Vec::new();
    for obj in sf.visible.iter().filter(|o| o.instance.is_some()) {
        let miss = noise.miss(obj.class);
        if miss > 0.0 && rng.random_bool(miss) {
            continue;
        }
        let r = obj.mask_rect;
        let (bw, bh) = (r.width(), r.height());
        let (cu, cv) = r.center();
        let du = gauss(rng, noise.center_jitter);
        let dv = gauss(rng, noise.center_jitter);
        let su = gauss(rng, noise.scale_jitter);
        let sv = gauss(rng, noise.scale_jitter);
        let nw = bw * noise.scale_bias * su.exp();
        let nh = bh * noise.scale_bias * sv.exp();
        let (ncu, ncv) = (cu + du * bw, cv + dv * bh);
        let rect = Rect::new(ncu - nw / 2.0, ncv - nh / 2.0, ncu + nw / 2.0, ncv + nh / 2.0)
            .clamp_to(w, h);
        if !(rect.width() >= 1.0 && rect.height() >= 1.0) {
            continue;
        }
        let jitter = du.abs() + dv.abs() + (su + noise.scale_bias.ln()).abs() + (sv + noise.scale_bias.ln()).abs();
        let conf = noise.conf_base - noise.conf_jitter_weight * jitter - noise.conf_occlusion_weight * obj.occlusion()
            + gauss(rng, noise.conf_noise);
        out.push(DetectionBox::from_rect(rect, classes.merged(obj.class), conf.clamp(0.0, 1.0)));
    }

    let things: Vec<ClassId> = {
        let mut v: Vec<ClassId> = classes.things().map(|c| classes.merged(c)).collect();
        v.dedup();
        v
    };
    let mut remaining = noise.false_positive_rate;
    while remaining > 0.0 && !things.is_empty() {
        let p = remaining.min(1.0);
        remaining -= 1.0;
        if !rng.random_bool(p) {
            continue;
        }
        let bw = rng.random_range(10.0..w / 4.0);
        let bh = rng.random_range(10.0..h / 3.0);
        let u = rng.random_range(0.0..w - bw);
        let v = rng.random_range(0.0..h - bh);
        let class = things[rng.random_range(0..things.len())];
        let conf = uniform(rng, noise.false_positive_conf);
        out.push(DetectionBox::from_rect(Rect::new(u, v, u + bw, v + bh), class, conf));
    }
    out
}

/// Frame `index` with its detections.
pub fn generate_sample(config: &SceneConfig, noise: &DetectorNoise, seed: u64, index: u64) -> (SynthFrame, Sample) {
    let sf = generate_indexed(config, seed, index);
    let mut rng = frame_rng(seed, index, 1);
    let detections = simulate_detections(&sf, &config.classes, noise, &mut rng);
    let sample = Sample {
        frame: sf.frame.clone(),
        detections,
        gt: sf.gt.clone(),
    };
    (sf, sample)
}

/// Generation parameters recorded in the dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorEcho {
    pub scene: SceneConfig,
    pub detector: DetectorNoise,
}

pub fn generate_dataset(
    config: &SceneConfig,
    noise: &DetectorNoise,
    n_frames: usize,
    seed: u64,
    split: &str,
    exec: Execution,
) -> Result<Dataset> {
    config.validate()?;
    noise.validate()?;
    let samples = exec.map_indexed(n_frames, |i| generate_sample(config, noise, seed, i as u64).1);
    let generator = serde_json::to_value(GeneratorEcho {
        scene: config.clone(),
        detector: noise.clone(),
    })
    .map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(Dataset {
        split: split.to_string(),
        classes: config.classes.clone(),
        seed: Some(seed),
        masks: None,
        generator: Some(generator),
        samples,
    })
}

/// Recover the scene and detector configuration stored by
/// [`generate_dataset`].
pub fn generator_echo(dataset: &Dataset) -> Option<GeneratorEcho> {
    dataset
        .generator
        .as_ref()
        .and_then(|v| serde_json::from_value(v.clone()).ok())
}

/// Masks of frames `0..n` regenerated from the seed.
pub fn generate_masks(config: &SceneConfig, n_frames: usize, seed: u64, exec: Execution) -> Vec<InstanceMask> {
    exec.map_indexed(n_frames, |i| generate_indexed(config, seed, i as u64).mask)
}
