//! RoI construction, Stixel capture and network input features.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::types::{ClassId, ClassTable, DetectionBox, StixelFrame};

/// Number of per-Stixel input features.
pub const FEATURES: usize = 10;

/// Column indices of the feature matrix.
pub mod col {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const Z: usize = 2;
    pub const W: usize = 3;
    pub const H: usize = 4;
    pub const U: usize = 5;
    pub const V: usize = 6;
    pub const H_REL: usize = 7;
    pub const LABEL: usize = 8;
    pub const BOX_LABEL: usize = 9;
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FilterParams {
    /// Center-preserving scale applied to every detection box, ≥ 1.
    pub sc_roi: f64,
    /// A Stixel is captured when more than this fraction of its area lies in
    /// the RoI box.
    pub t_roi: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams { sc_roi: 1.0, t_roi: 0.1 }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sc_roi >= 1.0) {
            return Err(Error::Parameter(format!("sc_roi must be >= 1, got {}", self.sc_roi)));
        }
        if !(self.t_roi > 0.0 && self.t_roi <= 1.0) {
            return Err(Error::Parameter(format!("t_roi must be in (0, 1], got {}", self.t_roi)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiBox {
    pub rect: Rect,
    pub source: DetectionBox,
    pub scale: f64,
}

impl RoiBox {
    pub fn box_label(&self) -> ClassId {
        self.source.box_label
    }

    pub fn box_conf(&self) -> f64 {
        self.source.box_conf
    }
}

/// Scale a detection box about its center and clamp it to the image.
pub fn scale_box(det: &DetectionBox, sc_roi: f64, image_width: f64, image_height: f64) -> Result<RoiBox> {
    if !(sc_roi >= 1.0) {
        return Err(Error::Parameter(format!("sc_roi must be >= 1, got {sc_roi}")));
    }
    let r = det.rect();
    let (cu, cv) = r.center();
    let (hw, hh) = (0.5 * r.width() * sc_roi, 0.5 * r.height() * sc_roi);
    let rect = if sc_roi == 1.0 {
        r
    } else {
        Rect::new(cu - hw, cv - hh, cu + hw, cv + hh)
    }
    .clamp_to(image_width, image_height);
    Ok(RoiBox {
        rect,
        source: *det,
        scale: sc_roi,
    })
}

/// Ids of the Stixels of which more than `t_roi` of the area lies inside the
/// RoI, ascending.
pub fn capture(frame: &StixelFrame, roi: &RoiBox, t_roi: f64) -> Vec<u32> {
    frame
        .stixels
        .iter()
        .filter(|s| {
            let r = s.rect();
            let area = r.area();
            area > 0.0 && r.intersection_area(&roi.rect) / area > t_roi
        })
        .map(|s| s.stixel_id)
        .collect()
}

/// The network input of one RoI: captured Stixels and their features
/// `[x, y, z, w, h, u', v', h', l, l_bb]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiSample {
    pub roi: RoiBox,
    pub stixel_ids: Vec<u32>,
    pub rects: Vec<Rect>,
    pub labels: Vec<ClassId>,
    pub features: Array2<f64>,
}

impl RoiSample {
    pub fn len(&self) -> usize {
        self.stixel_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stixel_ids.is_empty()
    }
}

/// Feature matrix for the captured Stixels. Returns `None` for an empty
/// capture, meaning the RoI is skipped.
pub fn build_sample(frame: &StixelFrame, roi: &RoiBox, captured: &[u32], classes: &ClassTable) -> Option<RoiSample> {
    if captured.is_empty() {
        return None;
    }
    let (rw, rh) = (roi.rect.width(), roi.rect.height());
    let box_label = classes.encode_label(roi.box_label());
    let mut features = Array2::zeros((captured.len(), FEATURES));
    let mut rects = Vec::with_capacity(captured.len());
    let mut labels = Vec::with_capacity(captured.len());
    for (i, &sid) in captured.iter().enumerate() {
        let s = frame.get(sid)?;
        let r = s.rect();
        let (cu, cv) = r.center();
        let mut row = features.row_mut(i);
        row[col::X] = s.x;
        row[col::Y] = s.y;
        row[col::Z] = s.z;
        row[col::W] = s.w;
        row[col::H] = s.h;
        row[col::U] = (cu - roi.rect.u_tl) / rw;
        row[col::V] = (cv - roi.rect.v_tl) / rh;
        row[col::H_REL] = r.height() / rh;
        row[col::LABEL] = classes.encode_label(s.label);
        row[col::BOX_LABEL] = box_label;
        rects.push(r);
        labels.push(s.label);
    }
    Some(RoiSample {
        roi: *roi,
        stixel_ids: captured.to_vec(),
        rects,
        labels,
        features,
    })
}

/// All non-empty RoI samples of a frame, paired with the index of their
/// detection.
pub fn filter_frame(
    frame: &StixelFrame,
    detections: &[DetectionBox],
    params: &FilterParams,
    classes: &ClassTable,
) -> Result<Vec<(usize, RoiSample)>> {
    params.validate()?;
    let (w, h) = (frame.width as f64, frame.height as f64);
    let mut out = Vec::new();
    for (i, det) in detections.iter().enumerate() {
        let roi = scale_box(det, params.sc_roi, w, h)?;
        if !roi.rect.is_valid() {
            continue;
        }
        let captured = capture(frame, &roi, params.t_roi);
        if let Some(sample) = build_sample(frame, &roi, &captured, classes) {
            out.push((i, sample));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Stixel;
    use proptest::prelude::*;

    fn stixel(id: u32, r: Rect, label: ClassId) -> Stixel {
        Stixel {
            stixel_id: id,
            x: id as f64,
            y: 0.0,
            z: 10.0 + id as f64,
            w: 0.3,
            h: 1.7,
            u_tl: r.u_tl,
            v_tl: r.v_tl,
            u_br: r.u_br,
            v_br: r.v_br,
            label,
            label_conf: 1.0,
        }
    }

    fn det(u0: f64, v0: f64, u1: f64, v1: f64) -> DetectionBox {
        DetectionBox::from_rect(Rect::new(u0, v0, u1, v1), 2, 0.9)
    }

    #[test]
    fn unit_scale_is_identity() {
        let d = det(10.0, 12.0, 31.0, 40.0);
        assert_eq!(scale_box(&d, 1.0, 100.0, 100.0).unwrap().rect, d.rect());
    }

    #[test]
    fn scale_about_center() {
        let r = scale_box(&det(10.0, 10.0, 30.0, 30.0), 1.4, 100.0, 100.0).unwrap().rect;
        for (a, b) in [(r.u_tl, 6.0), (r.v_tl, 6.0), (r.u_br, 34.0), (r.v_br, 34.0)] {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scale_clamps_at_edges() {
        let r = scale_box(&det(0.0, 80.0, 20.0, 100.0), 2.0, 100.0, 100.0).unwrap().rect;
        assert_eq!(r, Rect::new(0.0, 70.0, 30.0, 100.0));
    }

    #[test]
    fn scale_below_one_rejected() {
        assert!(scale_box(&det(0.0, 0.0, 1.0, 1.0), 0.9, 10.0, 10.0).is_err());
    }

    #[test]
    fn capture_threshold_is_strict() {
        let frame = StixelFrame::new(
            0,
            200,
            100,
            vec![
                stixel(0, Rect::new(20.0, 20.0, 28.0, 60.0), 2),
                // 5% inside: 2 of 40 rows.
                stixel(1, Rect::new(20.0, 58.0, 28.0, 98.0), 2),
                // exactly 10% inside.
                stixel(2, Rect::new(30.0, 56.0, 38.0, 96.0), 2),
            ],
        );
        let roi = scale_box(&det(10.0, 10.0, 50.0, 60.0), 1.0, 200.0, 100.0).unwrap();
        assert_eq!(capture(&frame, &roi, 0.1), vec![0]);
        assert_eq!(capture(&frame, &roi, 0.04), vec![0, 1, 2]);
        assert_eq!(capture(&frame, &roi, 1.0), Vec::<u32>::new());
    }

    #[test]
    fn centered_stixel_features() {
        let frame = StixelFrame::new(0, 100, 100, vec![stixel(0, Rect::new(16.0, 10.0, 24.0, 50.0), 2)]);
        let roi = scale_box(&det(10.0, 10.0, 30.0, 50.0), 1.0, 100.0, 100.0).unwrap();
        let table = ClassTable::cityscapes();
        let s = build_sample(&frame, &roi, &[0], &table).unwrap();
        let row = s.features.row(0);
        assert_eq!((row[col::U], row[col::V], row[col::H_REL]), (0.5, 0.5, 1.0));
        assert_eq!(row[col::Z], 10.0);
        assert_eq!(row[col::LABEL], 2.0 / 8.0);
        assert_eq!(row[col::BOX_LABEL], 2.0 / 8.0);
    }

    #[test]
    fn corner_stixel_features_near_zero() {
        let frame = StixelFrame::new(0, 100, 100, vec![stixel(0, Rect::new(10.0, 10.0, 12.0, 12.0), 2)]);
        let roi = scale_box(&det(10.0, 10.0, 50.0, 50.0), 1.0, 100.0, 100.0).unwrap();
        let s = build_sample(&frame, &roi, &[0], &ClassTable::cityscapes()).unwrap();
        assert!(s.features[[0, col::U]] < 0.05 && s.features[[0, col::V]] < 0.05);
    }

    #[test]
    fn empty_capture_skips() {
        let frame = StixelFrame::new(0, 100, 100, vec![]);
        let roi = scale_box(&det(10.0, 10.0, 50.0, 50.0), 1.0, 100.0, 100.0).unwrap();
        assert!(build_sample(&frame, &roi, &[], &ClassTable::cityscapes()).is_none());
    }

    fn frame_strategy() -> impl Strategy<Value = StixelFrame> {
        prop::collection::vec((0u32..90, 0u32..90, 1u32..12, 1u32..30), 1..25).prop_map(|v| {
            let stixels = v
                .into_iter()
                .enumerate()
                .map(|(i, (u, y, w, h))| {
                    let r = Rect::new(u as f64, y as f64, (u + w).min(100) as f64, (y + h).min(100) as f64);
                    stixel(i as u32, r, 2)
                })
                .collect();
            StixelFrame::new(0, 100, 100, stixels)
        })
    }

    proptest! {
        #[test]
        fn capture_monotone(frame in frame_strategy(), u in 0.0..60.0f64, v in 0.0..60.0f64,
                            w in 5.0..40.0f64, h in 5.0..40.0f64,
                            sa in 1.0..2.0f64, sb in 0.0..1.0f64, ta in 0.05..1.0f64, tb in 0.0..1.0f64) {
            let d = det(u, v, u + w, v + h);
            let small = scale_box(&d, sa, 100.0, 100.0).unwrap();
            let large = scale_box(&d, sa + sb, 100.0, 100.0).unwrap();
            let a = capture(&frame, &small, ta);
            let b = capture(&frame, &large, ta);
            prop_assert!(a.iter().all(|id| b.contains(id)));
            let tight = capture(&frame, &small, (ta + tb * (1.0 - ta)).min(1.0));
            prop_assert!(tight.iter().all(|id| a.contains(id)));
        }

        #[test]
        fn features_translation_consistent(frame in frame_strategy(), du in -5i32..5, dv in -5i32..5) {
            let d = det(20.0, 20.0, 70.0, 80.0);
            let roi = scale_box(&d, 1.0, 200.0, 200.0).unwrap();
            let ids: Vec<u32> = frame.stixels.iter().map(|s| s.stixel_id).collect();
            let table = ClassTable::cityscapes();
            let a = build_sample(&frame, &roi, &ids, &table).unwrap();
            let (du, dv) = (du as f64, dv as f64);
            let mut shifted = frame.clone();
            for s in &mut shifted.stixels {
                s.u_tl += du; s.u_br += du; s.v_tl += dv; s.v_br += dv;
            }
            let roi2 = RoiBox { rect: roi.rect.translate(du, dv), ..roi };
            let b = build_sample(&shifted, &roi2, &ids, &table).unwrap();
            for c in [col::U, col::V, col::H_REL] {
                for i in 0..a.len() {
                    prop_assert!((a.features[[i, c]] - b.features[[i, c]]).abs() < 1e-12);
                }
            }
        }
    }
}
