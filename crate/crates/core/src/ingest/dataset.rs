//! Line-delimited JSON dataset files bound together by a manifest.
//!
//! A dataset directory contains `manifest.json` plus
//! `<split>.frames.jsonl`, `<split>.dets.jsonl` and `<split>.labels.jsonl`,
//! one record per frame and line. Masks, when present, live in a
//! subdirectory named by the manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::mask::{export_instance_mask, import_instance_mask, InstanceMask, MaskEncoding};
use crate::types::{ClassTable, DetectionBox, InstanceId, InstanceLabeling, PredictedLabeling, StixelFrame};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskIndex {
    pub dir: String,
    pub encoding: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub split: String,
    pub frames: usize,
    pub classes: ClassTable,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<MaskIndex>,
    /// Free-form provenance, e.g. the generator configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub frame: StixelFrame,
    pub detections: Vec<DetectionBox>,
    pub gt: InstanceLabeling,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: String,
    pub classes: ClassTable,
    pub seed: Option<u64>,
    pub masks: Option<MaskIndex>,
    pub generator: Option<serde_json::Value>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn empty(split: impl Into<String>, classes: ClassTable) -> Self {
        Dataset {
            split: split.into(),
            classes,
            seed: None,
            masks: None,
            generator: None,
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            format_version: FORMAT_VERSION,
            split: self.split.clone(),
            frames: self.samples.len(),
            classes: self.classes.clone(),
            seed: self.seed,
            masks: self.masks.clone(),
            generator: self.generator.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.classes.validate()?;
        let mut ids = BTreeSet::new();
        for s in &self.samples {
            if !ids.insert(s.frame.frame_id) {
                return Err(Error::Invalid(format!("duplicate frame id {}", s.frame.frame_id)));
            }
            s.frame.validate()?;
            for d in &s.detections {
                d.validate()?;
            }
            s.gt.check_covers(&s.frame)?;
        }
        Ok(())
    }

    pub fn mask_encoding(&self) -> Option<Result<MaskEncoding>> {
        self.masks.as_ref().map(|m| m.encoding.parse())
    }

    /// Path of the mask file of `frame_id`, relative to the dataset root.
    pub fn mask_path(&self, root: &Path, frame_id: u64) -> Option<Result<PathBuf>> {
        let index = self.masks.as_ref()?;
        Some(index.encoding.parse::<MaskEncoding>().map(|enc| {
            root.join(&index.dir)
                .join(format!("{frame_id:06}.{}", enc.extension()))
        }))
    }
}

pub fn split_paths(dir: &Path, split: &str) -> [PathBuf; 3] {
    [
        dir.join(format!("{split}.frames.jsonl")),
        dir.join(format!("{split}.dets.jsonl")),
        dir.join(format!("{split}.labels.jsonl")),
    ]
}

#[derive(Serialize, Deserialize)]
struct DetRecord {
    frame_id: u64,
    boxes: Vec<DetectionBox>,
}

#[derive(Serialize, Deserialize)]
struct LabelRecord {
    frame_id: u64,
    labels: Vec<(u32, InstanceId)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scores: Option<Vec<(InstanceId, f64)>>,
}

impl From<&PredictedLabeling> for LabelRecord {
    fn from(p: &PredictedLabeling) -> Self {
        LabelRecord {
            frame_id: p.labeling.frame_id,
            labels: p.labeling.labels.iter().map(|(&k, &v)| (k, v)).collect(),
            scores: Some(p.scores.iter().map(|(&k, &v)| (k, v)).collect()),
        }
    }
}

impl From<LabelRecord> for PredictedLabeling {
    fn from(r: LabelRecord) -> Self {
        PredictedLabeling {
            labeling: InstanceLabeling {
                frame_id: r.frame_id,
                labels: r.labels.into_iter().collect(),
            },
            scores: r.scores.unwrap_or_default().into_iter().collect(),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_lines<T: Serialize>(path: &Path, records: impl Iterator<Item = T>) -> Result<()> {
    let mut out = create(path)?;
    for r in records {
        serde_json::to_writer(&mut out, &r).map_err(|e| Error::Invalid(e.to_string()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn save_manifest(manifest: &Manifest, dir: &Path) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let mut out = create(&path)?;
    serde_json::to_writer_pretty(&mut out, manifest).map_err(|e| Error::Invalid(e.to_string()))?;
    out.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    out.flush().map_err(|e| Error::io(&path, e))
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Parse {
            path: path.clone(),
            line: 1,
            message: "missing format_version".into(),
        })? as u32;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| Error::Parse {
        path,
        line: 1,
        message: e.to_string(),
    })
}

pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_manifest(&dataset.manifest(), dir)?;
    let [frames, dets, labels] = split_paths(dir, &dataset.split);
    write_lines(&frames, dataset.samples.iter().map(|s| &s.frame))?;
    write_lines(
        &dets,
        dataset.samples.iter().map(|s| DetRecord {
            frame_id: s.frame.frame_id,
            boxes: s.detections.clone(),
        }),
    )?;
    save_labelings(&labels, dataset.samples.iter().map(|s| &s.gt))
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest = load_manifest(dir)?;
    let [frames_path, dets_path, labels_path] = split_paths(dir, &manifest.split);
    let frames: Vec<StixelFrame> = read_lines(&frames_path)?;
    let mut dets: BTreeMap<u64, Vec<DetectionBox>> = BTreeMap::new();
    for r in read_lines::<DetRecord>(&dets_path)? {
        dets.insert(r.frame_id, r.boxes);
    }
    let mut labels: BTreeMap<u64, InstanceLabeling> = load_labelings(&labels_path)?
        .into_iter()
        .map(|p| (p.labeling.frame_id, p.labeling))
        .collect();
    if frames.len() != manifest.frames {
        return Err(Error::Invalid(format!(
            "manifest lists {} frames, found {}",
            manifest.frames,
            frames.len()
        )));
    }
    let known: BTreeSet<u64> = frames.iter().map(|f| f.frame_id).collect();
    if let Some(id) = dets.keys().chain(labels.keys()).find(|id| !known.contains(id)) {
        return Err(Error::Invalid(format!("record references unknown frame {id}")));
    }
    let samples = frames
        .into_iter()
        .map(|frame| {
            let frame = StixelFrame::new(frame.frame_id, frame.width, frame.height, frame.stixels);
            let gt = labels.remove(&frame.frame_id).ok_or_else(|| {
                Error::Invalid(format!("frame {} has no ground-truth labeling", frame.frame_id))
            })?;
            Ok(Sample {
                detections: dets.remove(&frame.frame_id).unwrap_or_default(),
                gt,
                frame,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let dataset = Dataset {
        split: manifest.split,
        classes: manifest.classes,
        seed: manifest.seed,
        masks: manifest.masks,
        generator: manifest.generator,
        samples,
    };
    dataset.validate()?;
    Ok(dataset)
}

pub const MASK_DIR: &str = "masks";

/// Write one mask per frame under `root/masks` and record the index in the
/// dataset. `masks[i]` belongs to the i-th sample.
pub fn save_masks(dataset: &mut Dataset, root: impl AsRef<Path>, masks: &[InstanceMask], encoding: MaskEncoding) -> Result<()> {
    if masks.len() != dataset.samples.len() {
        return Err(Error::Invalid(format!(
            "{} masks for {} frames",
            masks.len(),
            dataset.samples.len()
        )));
    }
    let root = root.as_ref();
    let dir = root.join(MASK_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    dataset.masks = Some(MaskIndex {
        dir: MASK_DIR.to_string(),
        encoding: encoding.to_string(),
    });
    for (s, m) in dataset.samples.iter().zip(masks) {
        let path = dataset.mask_path(root, s.frame.frame_id).expect("index set")?;
        export_instance_mask(m, path, encoding)?;
    }
    Ok(())
}

/// Masks of every sample in dataset order.
pub fn load_masks(dataset: &Dataset, root: impl AsRef<Path>) -> Result<Vec<InstanceMask>> {
    let root = root.as_ref();
    let encoding = dataset
        .mask_encoding()
        .ok_or_else(|| Error::Invalid("dataset has no instance masks".into()))??;
    dataset
        .samples
        .iter()
        .map(|s| {
            let path = dataset.mask_path(root, s.frame.frame_id).expect("index set")?;
            if !path.exists() {
                return Err(Error::Invalid(format!(
                    "frame {}: missing mask {}",
                    s.frame.frame_id,
                    path.display()
                )));
            }
            import_instance_mask(path, encoding)
        })
        .collect()
}

/// Ground-truth style labelings (no scores).
pub fn save_labelings<'a>(path: &Path, labelings: impl Iterator<Item = &'a InstanceLabeling>) -> Result<()> {
    write_lines(
        path,
        labelings.map(|l| LabelRecord {
            frame_id: l.frame_id,
            labels: l.labels.iter().map(|(&k, &v)| (k, v)).collect(),
            scores: None,
        }),
    )
}

pub fn save_predictions(path: &Path, predictions: &[PredictedLabeling]) -> Result<()> {
    write_lines(path, predictions.iter().map(LabelRecord::from))
}

/// Reads a labels file. Records without scores get an empty score map.
pub fn load_labelings(path: &Path) -> Result<Vec<PredictedLabeling>> {
    Ok(read_lines::<LabelRecord>(path)?
        .into_iter()
        .map(PredictedLabeling::from)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Stixel;

    fn stixel(id: u32, u: f64) -> Stixel {
        Stixel {
            stixel_id: id,
            x: 0.5,
            y: 0.0,
            z: 12.25,
            w: 0.2,
            h: 1.5,
            u_tl: u,
            v_tl: 10.0,
            u_br: u + 8.0,
            v_br: 40.0,
            label: 2,
            label_conf: 0.9,
        }
    }

    fn one_frame() -> Dataset {
        let frame = StixelFrame::new(3, 64, 48, vec![stixel(0, 0.0), stixel(1, 8.0)]);
        let mut gt = InstanceLabeling::new(3);
        gt.labels.insert(0, InstanceId::object(2, 0));
        gt.labels.insert(1, InstanceId::Background);
        let mut d = Dataset::empty("train", ClassTable::cityscapes());
        d.samples.push(Sample {
            frame,
            detections: vec![DetectionBox::from_rect(crate::geometry::Rect::new(1.0, 2.0, 9.5, 30.0), 2, 0.8)],
            gt,
        });
        d
    }

    #[test]
    fn empty_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = Dataset::empty("val", ClassTable::cityscapes());
        save_dataset(&d, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), d);
    }

    #[test]
    fn small_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = one_frame();
        save_dataset(&d, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), d);
    }

    #[test]
    fn malformed_record_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = one_frame();
        let mut second = d.samples[0].clone();
        second.frame.frame_id = 4;
        second.gt.frame_id = 4;
        d.samples.push(second);
        save_dataset(&d, dir.path()).unwrap();
        let [frames, _, _] = split_paths(dir.path(), "train");
        let text = std::fs::read_to_string(&frames).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[1] = "{\"frame_id\": 4, \"width\": ";
        std::fs::write(&frames, lines.join("\n")).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&one_frame(), dir.path()).unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&p).unwrap().replace("\"format_version\": 1", "\"format_version\": 9");
        std::fs::write(&p, text).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Version { found: 9, .. })));
    }

    #[test]
    fn invariant_violation_surfaces() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = one_frame();
        d.samples[0].frame.stixels[0].z = -1.0;
        save_dataset(&d, dir.path()).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Invalid(_))));
    }

    #[test]
    fn predictions_keep_scores() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pred.labels.jsonl");
        let mut pred = PredictedLabeling::from_ground_truth(&one_frame().samples[0].gt);
        pred.scores.insert(InstanceId::object(2, 0), 0.625);
        save_predictions(&p, std::slice::from_ref(&pred)).unwrap();
        assert_eq!(load_labelings(&p).unwrap(), vec![pred]);
    }
}
