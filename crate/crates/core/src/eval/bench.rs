//! Runtime benchmark of the inference pipeline on a synthetic workload with
//! exact Stixel, box and feature counts.

use std::fmt;
use std::time::Instant;

use ndarray::{concatenate, Array2, Axis};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bps::{bps, BpsConfig, RoiVotes};
use crate::error::{Error, Result};
use crate::filter::{filter_frame, FilterParams, RoiSample, FEATURES};
use crate::geometry::Rect;
use crate::pointnet::{object_probability, ArchitectureSpec, Batch, Network};
use crate::synth::{frame_rng, generate_indexed, simulate_detections, DetectorNoise, SceneConfig};
use crate::types::{ClassTable, DetectionBox, PredictedLabeling, StixelFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Workload {
    pub stixels: usize,
    pub boxes: usize,
    pub features: usize,
}

impl Workload {
    pub const fn new(stixels: usize, boxes: usize, features: usize) -> Self {
        Workload {
            stixels,
            boxes,
            features,
        }
    }

    /// Whether every count of `self` is at least the one of `other`.
    pub fn dominates(&self, other: &Workload) -> bool {
        self.stixels >= other.stixels && self.boxes >= other.boxes && self.features >= other.features
    }
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.stixels, self.boxes, self.features)
    }
}

/// Materialized benchmark input.
#[derive(Debug, Clone)]
pub struct BenchInput {
    pub workload: Workload,
    pub frame: StixelFrame,
    pub detections: Vec<DetectionBox>,
    /// Additional per-Stixel feature columns beyond the standard ten, in
    /// frame order.
    pub extra: Array2<f64>,
    pub classes: ClassTable,
}

/// Build a workload from a synthetic scene: column segments are split into
/// shorter Stixels until the frame has enough of them, which are then
/// subsampled to the exact count; boxes are the scene's detections padded
/// with jittered copies.
pub fn synthesize_workload(workload: Workload, seed: u64) -> Result<BenchInput> {
    if workload.features < FEATURES {
        return Err(Error::Parameter(format!("at least {FEATURES} features are required")));
    }
    // Dense background behind the objects so that most columns carry
    // Stixels.
    let mut cfg = SceneConfig {
        structures: (12, 18),
        structure_width: (4.0, 16.0),
        structure_depth: (60.0, 100.0),
        ..SceneConfig::default()
    };
    let mut found = None;
    let splits = [None, Some(128), Some(96), Some(64), Some(48), Some(32), Some(24), Some(16), Some(12)];
    for split in splits.into_iter().chain((1..=8).rev().map(Some)) {
        cfg.split_height = split;
        let sf = generate_indexed(&cfg, seed, 0);
        if sf.frame.len() >= workload.stixels {
            found = Some(sf);
            break;
        }
    }
    let sf = found.ok_or_else(|| Error::Parameter(format!("cannot synthesize {} Stixels", workload.stixels)))?;
    let mut rng = frame_rng(seed, 0, 1);
    let mut keep = sample_indices(&mut rng, sf.frame.len(), workload.stixels).into_vec();
    keep.sort_unstable();
    let stixels = keep.iter().map(|&i| sf.frame.stixels[i].clone()).collect();
    let frame = StixelFrame::new(0, sf.frame.width, sf.frame.height, stixels);

    let noise = DetectorNoise {
        default_miss_rate: 0.0,
        false_positive_rate: 0.0,
        ..DetectorNoise::default()
    };
    let base = simulate_detections(&sf, &cfg.classes, &noise, &mut rng);
    let mut detections = base.clone();
    let (w, h) = (frame.width as f64, frame.height as f64);
    while detections.len() < workload.boxes {
        let d = if base.is_empty() {
            let (bw, bh) = (rng.random_range(16.0..w / 4.0), rng.random_range(16.0..h / 3.0));
            let (u, v) = (rng.random_range(0.0..w - bw), rng.random_range(0.0..h - bh));
            DetectionBox::from_rect(Rect::new(u, v, u + bw, v + bh), 2, 0.5)
        } else {
            let b = &base[detections.len() % base.len()];
            let r = b.rect();
            let (cu, cv) = r.center();
            let (du, dv) = (rng.random_range(-0.1..0.1) * r.width(), rng.random_range(-0.1..0.1) * r.height());
            let s = rng.random_range(0.85..1.15);
            let (hw, hh) = (r.width() * s / 2.0, r.height() * s / 2.0);
            let rect = Rect::new(cu + du - hw, cv + dv - hh, cu + du + hw, cv + dv + hh).clamp_to(w, h);
            DetectionBox::from_rect(rect, b.box_label, rng.random_range(0.3..0.9))
        };
        detections.push(d);
    }
    detections.truncate(workload.boxes);
    let extra = Array2::from_shape_fn((frame.len(), workload.features - FEATURES), |_| rng.random_range(-1.0..1.0));
    Ok(BenchInput {
        workload,
        frame,
        detections,
        extra,
        classes: cfg.classes,
    })
}

/// Filtering stage: RoI samples with the extra feature columns appended.
pub fn filter_stage(input: &BenchInput, params: &FilterParams) -> Result<Vec<RoiSample>> {
    let mut rois: Vec<RoiSample> = filter_frame(&input.frame, &input.detections, params, &input.classes)?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    if input.extra.ncols() > 0 {
        for r in &mut rois {
            let rows: Vec<usize> = r
                .stixel_ids
                .iter()
                .map(|id| input.frame.stixels.binary_search_by_key(id, |s| s.stixel_id).expect("captured id"))
                .collect();
            let extra = input.extra.select(Axis(0), &rows);
            r.features = concatenate(Axis(1), &[r.features.view(), extra.view()]).expect("same row count");
        }
    }
    Ok(rois)
}

/// Model stage: one stacked forward pass in 32-bit floats.
pub fn model_stage(model: &Network<f32>, rois: &[RoiSample]) -> Result<Vec<Vec<f64>>> {
    if rois.is_empty() {
        return Ok(Vec::new());
    }
    let feats: Vec<Array2<f32>> = rois.iter().map(|r| r.features.mapv(|v| v as f32)).collect();
    let batch = Batch::stack(feats.iter().map(|f| f.view()))?;
    let pc = object_probability(&model.logits(&batch)?);
    Ok((0..rois.len())
        .map(|s| pc[batch.range(s)].iter().map(|&p| f64::from(p)).collect())
        .collect())
}

pub fn bps_stage(frame: &StixelFrame, rois: &[RoiSample], pcs: &[Vec<f64>], classes: &ClassTable, cfg: &BpsConfig) -> PredictedLabeling {
    let votes: Vec<RoiVotes> = rois
        .iter()
        .zip(pcs)
        .map(|(r, pc)| RoiVotes {
            box_label: classes.merged(r.roi.box_label()),
            c_bb: r.roi.box_conf(),
            stixel_ids: r.stixel_ids.clone(),
            pc: pc.clone(),
        })
        .collect();
    bps(frame, &votes, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentTime {
    pub component: String,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub std_ms: f64,
}

impl ComponentTime {
    pub fn fps(&self) -> f64 {
        1000.0 / self.mean_ms
    }

    fn from_samples(component: &str, ms: &[f64]) -> Self {
        let n = ms.len() as f64;
        let mean = ms.iter().sum::<f64>() / n;
        let var = ms.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
        ComponentTime {
            component: component.to_string(),
            mean_ms: mean,
            min_ms: ms.iter().copied().fold(f64::INFINITY, f64::min),
            std_ms: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub workload: Workload,
    pub runs: usize,
    pub warmup: usize,
    /// Mean captured Stixels per RoI.
    pub mean_captured: f64,
    pub filtering: ComponentTime,
    pub model: ComponentTime,
    pub bps: ComponentTime,
    pub overall: ComponentTime,
}

impl BenchReport {
    pub fn components(&self) -> [&ComponentTime; 4] {
        [&self.filtering, &self.model, &self.bps, &self.overall]
    }

    pub const CSV_HEADER: &'static str = "stixels,boxes,features,component,mean_ms,min_ms,std_ms,fps\n";

    pub fn csv_rows(&self) -> String {
        let w = self.workload;
        self.components()
            .iter()
            .map(|c| {
                format!(
                    "{},{},{},{},{:.4},{:.4},{:.4},{:.1}\n",
                    w.stixels,
                    w.boxes,
                    w.features,
                    c.component,
                    c.mean_ms,
                    c.min_ms,
                    c.std_ms,
                    c.fps()
                )
            })
            .collect()
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in self.components() {
            writeln!(
                f,
                "{:>5} {:>4} {:>3}  {:<10} {:>9.3} ms {:>8.1} fps",
                self.workload.stixels,
                self.workload.boxes,
                self.workload.features,
                c.component,
                c.mean_ms,
                c.fps()
            )?;
        }
        Ok(())
    }
}

fn time<T>(warmup: usize, runs: usize, mut f: impl FnMut() -> Result<T>) -> Result<Vec<f64>> {
    for _ in 0..warmup {
        std::hint::black_box(f()?);
    }
    let mut ms = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        std::hint::black_box(f()?);
        ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(ms)
}

/// Time filtering, the untrained network's forward pass and selection
/// separately and composed, averaged over `runs` after `warmup` runs.
pub fn run_benchmark(workload: Workload, runs: usize, warmup: usize, seed: u64) -> Result<BenchReport> {
    if runs == 0 {
        return Err(Error::Parameter("at least one run is required".into()));
    }
    let input = synthesize_workload(workload, seed)?;
    let arch = ArchitectureSpec {
        input_width: workload.features,
        ..ArchitectureSpec::default()
    };
    let model: Network<f32> = Network::init(&arch, &mut ChaCha8Rng::seed_from_u64(seed))?.cast();
    let filter = FilterParams::default();
    let bps_cfg = BpsConfig::default();

    let rois = filter_stage(&input, &filter)?;
    let pcs = model_stage(&model, &rois)?;
    let mean_captured = if rois.is_empty() {
        0.0
    } else {
        rois.iter().map(|r| r.len()).sum::<usize>() as f64 / rois.len() as f64
    };

    let t_filter = time(warmup, runs, || filter_stage(&input, &filter))?;
    let t_model = time(warmup, runs, || model_stage(&model, &rois))?;
    let t_bps = time(warmup, runs, || Ok(bps_stage(&input.frame, &rois, &pcs, &input.classes, &bps_cfg)))?;
    let t_all = time(warmup, runs, || {
        let r = filter_stage(&input, &filter)?;
        let p = model_stage(&model, &r)?;
        Ok(bps_stage(&input.frame, &r, &p, &input.classes, &bps_cfg))
    })?;
    Ok(BenchReport {
        workload,
        runs,
        warmup,
        mean_captured,
        filtering: ComponentTime::from_samples("filtering", &t_filter),
        model: ComponentTime::from_samples("model", &t_model),
        bps: ComponentTime::from_samples("BPS", &t_bps),
        overall: ComponentTime::from_samples("overall", &t_all),
    })
}

/// The workloads of the standard benchmark table.
pub fn standard_workloads() -> Vec<Workload> {
    vec![
        Workload::new(753, 50, 10),
        Workload::new(1500, 50, 10),
        Workload::new(753, 100, 10),
        Workload::new(1500, 100, 10),
        Workload::new(1500, 100, 20),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn workload_counts_are_exact() {
        for w in [Workload::new(753, 50, 10), Workload::new(100, 7, 20)] {
            let input = synthesize_workload(w, 3).unwrap();
            assert_eq!(input.frame.len(), w.stixels);
            assert_eq!(input.detections.len(), w.boxes);
            let rois = filter_stage(&input, &FilterParams::default()).unwrap();
            assert!(rois.iter().all(|r| r.features.ncols() == w.features));
        }
    }

    #[test]
    fn workload_is_deterministic() {
        let a = synthesize_workload(Workload::new(300, 20, 12), 9).unwrap();
        let b = synthesize_workload(Workload::new(300, 20, 12), 9).unwrap();
        assert_eq!(a.frame, b.frame);
        assert_eq!(a.detections, b.detections);
        assert_eq!(a.extra, b.extra);
    }

    #[test]
    fn report_times_are_positive() {
        let r = run_benchmark(Workload::new(200, 10, 10), 2, 1, 0).unwrap();
        assert!(r.components().iter().all(|c| c.mean_ms > 0.0));
        assert_eq!(r.csv_rows().lines().count(), 4);
        assert!(run_benchmark(Workload::new(200, 10, 10), 0, 1, 0).is_err());
    }
}
