//! Domain types shared across the pipeline.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::Rect;

/// Index into a [`ClassTable`].
pub type ClassId = usize;

/// One Semantic Stixel.
///
/// `(x, z)` is the world point on the object surface under the column
/// center; `y` is the height above ground of the Stixel's lower edge.
/// All metric values are in meters, image coordinates in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stixel {
    pub stixel_id: u32,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
    pub h: f64,
    pub u_tl: f64,
    pub v_tl: f64,
    pub u_br: f64,
    pub v_br: f64,
    pub label: ClassId,
    pub label_conf: f64,
}

impl Stixel {
    pub fn rect(&self) -> Rect {
        Rect::new(self.u_tl, self.v_tl, self.u_br, self.v_br)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.u_tl < self.u_br
            && self.v_tl < self.v_br
            && self.w > 0.0
            && self.h > 0.0
            && self.z > 0.0
            && (0.0..=1.0).contains(&self.label_conf)
            && [self.x, self.y].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("stixel {} violates invariants", self.stixel_id)))
        }
    }
}

/// A 2D detector output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub u_tl: f64,
    pub v_tl: f64,
    pub u_br: f64,
    pub v_br: f64,
    pub box_label: ClassId,
    pub box_conf: f64,
}

impl DetectionBox {
    pub fn rect(&self) -> Rect {
        Rect::new(self.u_tl, self.v_tl, self.u_br, self.v_br)
    }

    pub fn from_rect(rect: Rect, box_label: ClassId, box_conf: f64) -> Self {
        DetectionBox {
            u_tl: rect.u_tl,
            v_tl: rect.v_tl,
            u_br: rect.u_br,
            v_br: rect.v_br,
            box_label,
            box_conf,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.u_tl < self.u_br && self.v_tl < self.v_br && (0.0..=1.0).contains(&self.box_conf) {
            Ok(())
        } else {
            Err(Error::Invalid(format!("detection box {:?} violates invariants", self.rect())))
        }
    }
}

/// All Stixels of one image, sorted by ascending `stixel_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StixelFrame {
    pub frame_id: u64,
    pub width: u32,
    pub height: u32,
    pub stixels: Vec<Stixel>,
}

impl StixelFrame {
    pub fn new(frame_id: u64, width: u32, height: u32, mut stixels: Vec<Stixel>) -> Self {
        stixels.sort_by_key(|s| s.stixel_id);
        StixelFrame {
            frame_id,
            width,
            height,
            stixels,
        }
    }

    pub fn len(&self) -> usize {
        self.stixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stixels.is_empty()
    }

    pub fn image_rect(&self) -> Rect {
        Rect::new(0.0, 0.0, self.width as f64, self.height as f64)
    }

    pub fn get(&self, stixel_id: u32) -> Option<&Stixel> {
        self.stixels
            .binary_search_by_key(&stixel_id, |s| s.stixel_id)
            .ok()
            .map(|i| &self.stixels[i])
    }

    pub fn validate(&self) -> Result<()> {
        let bounds = self.image_rect();
        for (i, s) in self.stixels.iter().enumerate() {
            s.validate()?;
            if !bounds.contains_rect(&s.rect()) {
                return Err(Error::Invalid(format!(
                    "frame {}: stixel {} lies outside the image",
                    self.frame_id, s.stixel_id
                )));
            }
            if i > 0 && self.stixels[i - 1].stixel_id >= s.stixel_id {
                return Err(Error::Invalid(format!(
                    "frame {}: stixel ids not unique and ascending at {}",
                    self.frame_id, s.stixel_id
                )));
            }
        }
        Ok(())
    }
}

/// Instance identity of a Stixel: a class plus a per-class counter, or
/// background.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InstanceId {
    Background,
    Object { class: ClassId, counter: u32 },
}

impl InstanceId {
    pub const BACKGROUND: InstanceId = InstanceId::Background;

    pub fn object(class: ClassId, counter: u32) -> Self {
        InstanceId::Object { class, counter }
    }

    pub fn is_background(&self) -> bool {
        matches!(self, InstanceId::Background)
    }

    pub fn class(&self) -> Option<ClassId> {
        match self {
            InstanceId::Background => None,
            InstanceId::Object { class, .. } => Some(*class),
        }
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InstanceId::Background => f.write_str("bg"),
            InstanceId::Object { class, counter } => write!(f, "{class}:{counter}"),
        }
    }
}

// Serialized as `null` or `[class, counter]`.
impl Serialize for InstanceId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            InstanceId::Background => s.serialize_none(),
            InstanceId::Object { class, counter } => (*class as u64, *counter).serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for InstanceId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v: Option<(u64, u32)> = Option::deserialize(d)?;
        Ok(match v {
            None => InstanceId::Background,
            Some((class, counter)) => InstanceId::object(class as ClassId, counter),
        })
    }
}

/// Per-Stixel instance assignment of one frame.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InstanceLabeling {
    pub frame_id: u64,
    pub labels: BTreeMap<u32, InstanceId>,
}

impl InstanceLabeling {
    pub fn new(frame_id: u64) -> Self {
        InstanceLabeling {
            frame_id,
            labels: BTreeMap::new(),
        }
    }

    /// Every Stixel of `frame` labeled background.
    pub fn background(frame: &StixelFrame) -> Self {
        InstanceLabeling {
            frame_id: frame.frame_id,
            labels: frame
                .stixels
                .iter()
                .map(|s| (s.stixel_id, InstanceId::Background))
                .collect(),
        }
    }

    pub fn get(&self, stixel_id: u32) -> InstanceId {
        self.labels.get(&stixel_id).copied().unwrap_or(InstanceId::Background)
    }

    /// Stixel ids per non-background instance, in ascending id order.
    pub fn instances(&self) -> BTreeMap<InstanceId, Vec<u32>> {
        let mut out: BTreeMap<InstanceId, Vec<u32>> = BTreeMap::new();
        for (&sid, &inst) in &self.labels {
            if !inst.is_background() {
                out.entry(inst).or_default().push(sid);
            }
        }
        out
    }

    /// Checks that every Stixel of the frame is labeled exactly once and no
    /// foreign ids are present.
    pub fn check_covers(&self, frame: &StixelFrame) -> Result<()> {
        if self.frame_id != frame.frame_id {
            return Err(Error::Invalid(format!(
                "labeling for frame {} paired with frame {}",
                self.frame_id, frame.frame_id
            )));
        }
        let same = self.labels.len() == frame.len()
            && frame.stixels.iter().all(|s| self.labels.contains_key(&s.stixel_id));
        if same {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "labeling of frame {} does not cover its stixels exactly",
                frame.frame_id
            )))
        }
    }

    /// Renumber counters densely per class in order of each instance's
    /// smallest Stixel id. Used to compare partitions produced with different
    /// enumeration orders.
    pub fn canonical(&self) -> InstanceLabeling {
        let mut first: Vec<(u32, InstanceId)> = self
            .instances()
            .into_iter()
            .map(|(inst, ids)| (ids[0], inst))
            .collect();
        first.sort();
        let mut next: BTreeMap<ClassId, u32> = BTreeMap::new();
        let mut remap = BTreeMap::new();
        for (_, inst) in first {
            let class = inst.class().expect("non-background");
            let c = next.entry(class).or_insert(0);
            remap.insert(inst, InstanceId::object(class, *c));
            *c += 1;
        }
        InstanceLabeling {
            frame_id: self.frame_id,
            labels: self
                .labels
                .iter()
                .map(|(&sid, inst)| (sid, remap.get(inst).copied().unwrap_or(InstanceId::Background)))
                .collect(),
        }
    }
}

/// A predicted labeling plus one confidence per predicted instance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictedLabeling {
    pub labeling: InstanceLabeling,
    pub scores: BTreeMap<InstanceId, f64>,
}

impl PredictedLabeling {
    pub fn score(&self, inst: &InstanceId) -> f64 {
        self.scores.get(inst).copied().unwrap_or(1.0)
    }

    /// Treat a labeling as a prediction with confidence 1.0 per instance.
    pub fn from_ground_truth(labeling: &InstanceLabeling) -> Self {
        let scores = labeling.instances().into_keys().map(|i| (i, 1.0)).collect();
        PredictedLabeling {
            labeling: labeling.clone(),
            scores,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub name: String,
    /// Class code used in pixel masks (`code = mask_id * 1000 + counter`).
    pub mask_id: u32,
    pub evaluated: bool,
    /// `false` for stuff classes (no instances).
    pub thing: bool,
}

/// Ordered class table with evaluated-class flags and a class merge map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTable {
    pub classes: Vec<ClassInfo>,
    /// `source -> target`, e.g. train -> bus for the large-vehicle class.
    pub merge: BTreeMap<ClassId, ClassId>,
}

impl ClassTable {
    /// The eight Cityscapes instance classes plus one background stuff
    /// class, with train merged into bus.
    pub fn cityscapes() -> Self {
        let things = [
            ("person", 24),
            ("rider", 25),
            ("car", 26),
            ("truck", 27),
            ("bus", 28),
            ("train", 31),
            ("motorcycle", 32),
            ("bicycle", 33),
        ];
        let mut classes: Vec<ClassInfo> = things
            .iter()
            .map(|&(name, mask_id)| ClassInfo {
                name: name.to_string(),
                mask_id,
                evaluated: true,
                thing: true,
            })
            .collect();
        classes.push(ClassInfo {
            name: "background".to_string(),
            mask_id: 0,
            evaluated: false,
            thing: false,
        });
        ClassTable {
            classes,
            merge: BTreeMap::from([(5, 4)]),
        }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn name(&self, class: ClassId) -> &str {
        self.classes.get(class).map_or("?", |c| c.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<ClassId> {
        self.classes.iter().position(|c| c.name == name)
    }

    pub fn merged(&self, class: ClassId) -> ClassId {
        self.merge.get(&class).copied().unwrap_or(class)
    }

    pub fn is_thing(&self, class: ClassId) -> bool {
        self.classes.get(class).is_some_and(|c| c.thing)
    }

    pub fn evaluated(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.classes
            .iter()
            .enumerate()
            .filter(|(_, c)| c.evaluated)
            .map(|(i, _)| i)
    }

    pub fn things(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.classes
            .iter()
            .enumerate()
            .filter(|(_, c)| c.thing)
            .map(|(i, _)| i)
    }

    /// First stuff class, used as the semantic label of background Stixels.
    pub fn background_class(&self) -> Option<ClassId> {
        self.classes.iter().position(|c| !c.thing)
    }

    pub fn by_mask_id(&self, mask_id: u32) -> Option<ClassId> {
        self.classes
            .iter()
            .position(|c| c.thing && c.mask_id == mask_id)
    }

    /// Scalar label encoding used as a network feature.
    pub fn encode_label(&self, class: ClassId) -> f64 {
        if self.len() <= 1 {
            0.0
        } else {
            class as f64 / (self.len() - 1) as f64
        }
    }

    pub fn decode_label(&self, value: f64) -> ClassId {
        if self.len() <= 1 {
            0
        } else {
            (value * (self.len() - 1) as f64).round() as ClassId
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Invalid("class table is empty".into()));
        }
        for (&src, &dst) in &self.merge {
            if src >= self.len() || dst >= self.len() {
                return Err(Error::Invalid(format!("merge {src}->{dst} out of range")));
            }
            if self.merge.contains_key(&dst) {
                return Err(Error::Invalid(format!("merge map not idempotent at {dst}")));
            }
        }
        Ok(())
    }
}

impl Default for ClassTable {
    fn default() -> Self {
        ClassTable::cityscapes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn background_is_distinct() {
        for class in 0..10 {
            for counter in 0..10 {
                assert_ne!(InstanceId::BACKGROUND, InstanceId::object(class, counter));
            }
        }
    }

    #[test]
    fn instance_id_json() {
        let s = serde_json::to_string(&InstanceId::object(2, 7)).unwrap();
        assert_eq!(s, "[2,7]");
        assert_eq!(serde_json::to_string(&InstanceId::Background).unwrap(), "null");
        let back: InstanceId = serde_json::from_str("[2,7]").unwrap();
        assert_eq!(back, InstanceId::object(2, 7));
    }

    #[test]
    fn default_table() {
        let t = ClassTable::cityscapes();
        t.validate().unwrap();
        assert_eq!(t.len(), 9);
        assert_eq!(t.merged(t.index_of("train").unwrap()), t.index_of("bus").unwrap());
        assert_eq!(t.merged(t.merged(5)), t.merged(5));
        assert_eq!(t.evaluated().count(), 8);
        assert_eq!(t.by_mask_id(26), Some(2));
        for c in 0..t.len() {
            assert_eq!(t.decode_label(t.encode_label(c)), c);
        }
    }

    #[test]
    fn non_idempotent_merge_rejected() {
        let mut t = ClassTable::cityscapes();
        t.merge.insert(4, 2);
        assert!(t.validate().is_err());
    }

    #[test]
    fn canonical_renumbering() {
        let mut l = InstanceLabeling::new(0);
        l.labels.insert(0, InstanceId::object(2, 5));
        l.labels.insert(1, InstanceId::object(2, 1));
        l.labels.insert(2, InstanceId::Background);
        l.labels.insert(3, InstanceId::object(2, 5));
        let c = l.canonical();
        assert_eq!(c.get(0), InstanceId::object(2, 0));
        assert_eq!(c.get(1), InstanceId::object(2, 1));
        assert_eq!(c.get(3), InstanceId::object(2, 0));
        assert_eq!(c.get(2), InstanceId::Background);
    }
}
