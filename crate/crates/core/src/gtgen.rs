//! Stixel-level instance ground truth from pixel instance masks.
//!
//! A Stixel is assigned to the mask instance covering the largest fraction
//! of its rasterized rectangle when that fraction strictly exceeds `t_ov`.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{mask_average_precision, ApReport};
use crate::exec::Execution;
use crate::ingest::mask::{decode_code, InstanceMask};
use crate::types::{ClassTable, InstanceId, InstanceLabeling, PredictedLabeling, Stixel, StixelFrame};

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapAssignment {
    pub stixel_id: u32,
    /// `(mask code, fraction)` for every instance touching the Stixel, in
    /// code order.
    pub fractions: Vec<(u16, f64)>,
    /// Winning mask code, `None` for background.
    pub winner: Option<u16>,
}

impl OverlapAssignment {
    pub fn winner_fraction(&self) -> f64 {
        self.winner
            .and_then(|w| self.fractions.iter().find(|(c, _)| *c == w))
            .map_or(0.0, |&(_, f)| f)
    }
}

fn stixel_overlaps(stixel: &Stixel, mask: &InstanceMask, classes: &ClassTable) -> Result<Vec<(u16, f64)>> {
    let b = stixel.rect().pixel_bounds(mask.width, mask.height);
    if b.is_empty() {
        return Err(Error::Invalid(format!("stixel {} covers no mask pixels", stixel.stixel_id)));
    }
    let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
    for v in b.v0..b.v1 {
        for &code in &mask.row(v)[b.u0..b.u1] {
            let known = decode_code(code).is_some_and(|i| classes.by_mask_id(i.class_code).is_some());
            if known {
                *counts.entry(code).or_insert(0) += 1;
            }
        }
    }
    let total = b.count() as f64;
    Ok(counts.into_iter().map(|(c, n)| (c, n as f64 / total)).collect())
}

/// Fraction of the Stixel's pixels that carry `code`.
pub fn overlap_fraction(stixel: &Stixel, mask: &InstanceMask, code: u16) -> Result<f64> {
    let b = stixel.rect().pixel_bounds(mask.width, mask.height);
    if b.is_empty() {
        return Err(Error::Invalid(format!("stixel {} covers no mask pixels", stixel.stixel_id)));
    }
    let mut hit = 0usize;
    for v in b.v0..b.v1 {
        hit += mask.row(v)[b.u0..b.u1].iter().filter(|&&c| c == code).count();
    }
    Ok(hit as f64 / b.count() as f64)
}

/// Maximum-overlap winner above `t_ov`; equal fractions go to the smaller
/// code.
pub fn select_winner(fractions: &[(u16, f64)], t_ov: f64) -> Option<u16> {
    let mut best: Option<(u16, f64)> = None;
    for &(code, f) in fractions {
        let better = match best {
            None => true,
            Some((bc, bf)) => f > bf || (f == bf && code < bc),
        };
        if better {
            best = Some((code, f));
        }
    }
    best.filter(|&(_, f)| f > t_ov).map(|(c, _)| c)
}

pub fn assign_stixel(stixel: &Stixel, mask: &InstanceMask, t_ov: f64, classes: &ClassTable) -> Result<OverlapAssignment> {
    let fractions = stixel_overlaps(stixel, mask, classes)?;
    Ok(OverlapAssignment {
        stixel_id: stixel.stixel_id,
        winner: select_winner(&fractions, t_ov),
        fractions,
    })
}

fn check_threshold(t_ov: f64) -> Result<()> {
    if !(t_ov > 0.0 && t_ov <= 1.0) {
        return Err(Error::Parameter(format!("t_ov = {t_ov} outside (0, 1]")));
    }
    Ok(())
}

fn check_dims(frame: &StixelFrame, mask: &InstanceMask) -> Result<()> {
    if frame.width as usize != mask.width || frame.height as usize != mask.height {
        return Err(Error::Invalid(format!(
            "frame {}: mask is {}x{}, frame is {}x{}",
            frame.frame_id, mask.width, mask.height, frame.width, frame.height
        )));
    }
    Ok(())
}

/// Overlaps of every Stixel of the frame, independent of the threshold.
pub fn frame_overlaps(frame: &StixelFrame, mask: &InstanceMask, classes: &ClassTable) -> Result<Vec<OverlapAssignment>> {
    check_dims(frame, mask)?;
    frame
        .stixels
        .iter()
        .map(|s| {
            Ok(OverlapAssignment {
                stixel_id: s.stixel_id,
                fractions: stixel_overlaps(s, mask, classes)?,
                winner: None,
            })
        })
        .collect()
}

/// Labeling from precomputed overlaps. Counters are dense per class in
/// mask-code order; each instance's score is the mean winning fraction of
/// its Stixels.
pub fn labeling_from_overlaps(
    frame_id: u64,
    overlaps: &[OverlapAssignment],
    t_ov: f64,
    classes: &ClassTable,
) -> PredictedLabeling {
    let winners: Vec<(u32, Option<u16>, f64)> = overlaps
        .iter()
        .map(|o| {
            let w = select_winner(&o.fractions, t_ov);
            let f = w.and_then(|w| o.fractions.iter().find(|(c, _)| *c == w)).map_or(0.0, |x| x.1);
            (o.stixel_id, w, f)
        })
        .collect();
    let mut codes: Vec<u16> = winners.iter().filter_map(|w| w.1).collect();
    codes.sort_unstable();
    codes.dedup();
    let mut ids: BTreeMap<u16, InstanceId> = BTreeMap::new();
    let mut counters: BTreeMap<usize, u32> = BTreeMap::new();
    for code in codes {
        let class = decode_code(code)
            .and_then(|i| classes.by_mask_id(i.class_code))
            .expect("winners have known classes");
        let c = counters.entry(class).or_insert(0);
        ids.insert(code, InstanceId::object(class, *c));
        *c += 1;
    }
    let mut labeling = InstanceLabeling::new(frame_id);
    let mut sums: BTreeMap<InstanceId, (f64, usize)> = BTreeMap::new();
    for (sid, w, f) in winners {
        let id = w.map_or(InstanceId::Background, |c| ids[&c]);
        labeling.labels.insert(sid, id);
        if !id.is_background() {
            let e = sums.entry(id).or_insert((0.0, 0));
            e.0 += f;
            e.1 += 1;
        }
    }
    PredictedLabeling {
        labeling,
        scores: sums.into_iter().map(|(id, (s, n))| (id, s / n as f64)).collect(),
    }
}

pub fn generate_gt(frame: &StixelFrame, mask: &InstanceMask, t_ov: f64, classes: &ClassTable) -> Result<InstanceLabeling> {
    Ok(generate_scored_gt(frame, mask, t_ov, classes)?.labeling)
}

/// Generated ground truth with per-instance scores for mask-level AP.
pub fn generate_scored_gt(
    frame: &StixelFrame,
    mask: &InstanceMask,
    t_ov: f64,
    classes: &ClassTable,
) -> Result<PredictedLabeling> {
    check_threshold(t_ov)?;
    let overlaps = frame_overlaps(frame, mask, classes)?;
    Ok(labeling_from_overlaps(frame.frame_id, &overlaps, t_ov, classes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum SweepCriterion {
    #[default]
    Ap,
    Ap50,
}

impl std::str::FromStr for SweepCriterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ap" => Ok(SweepCriterion::Ap),
            "ap50" => Ok(SweepCriterion::Ap50),
            _ => Err(Error::Parameter(format!("unknown sweep criterion {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub t_ov: f64,
    pub report: ApReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Threshold with the highest mean AP (or AP50); ties go to the smaller
    /// threshold.
    pub fn argmax(&self, criterion: SweepCriterion) -> f64 {
        let value = |r: &SweepRow| match criterion {
            SweepCriterion::Ap => r.report.mean_ap,
            SweepCriterion::Ap50 => r.report.mean_ap50,
        };
        let mut best = &self.rows[0];
        for r in &self.rows[1..] {
            if value(r) > value(best) {
                best = r;
            }
        }
        best.t_ov
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t_ov");
        if let Some(first) = self.rows.first() {
            for c in &first.report.classes {
                s.push_str(&format!(",ap_{}", c.name));
            }
        }
        s.push_str(",mean_ap,mean_ap50\n");
        for r in &self.rows {
            s.push_str(&format!("{:.4}", r.t_ov));
            for c in &r.report.classes {
                if c.included() {
                    s.push_str(&format!(",{:.6}", c.ap));
                } else {
                    s.push(',');
                }
            }
            s.push_str(&format!(",{:.6},{:.6}\n", r.report.mean_ap, r.report.mean_ap50));
        }
        s
    }
}

/// Score generated ground truth against the masks for each threshold.
pub fn sweep_t_ov(
    frames: &[(&StixelFrame, &InstanceMask)],
    thresholds: &[f64],
    classes: &ClassTable,
    exec: Execution,
) -> Result<SweepTable> {
    if thresholds.is_empty() {
        return Err(Error::Parameter("empty threshold list".into()));
    }
    if frames.is_empty() {
        return Err(Error::Empty("sweep frames"));
    }
    for w in thresholds.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::Parameter("thresholds must be strictly increasing".into()));
        }
    }
    for &t in thresholds {
        check_threshold(t)?;
    }
    let overlaps: Result<Vec<Vec<OverlapAssignment>>> = exec
        .map(frames, |(f, m)| frame_overlaps(f, m, classes))
        .into_iter()
        .collect();
    let overlaps = overlaps?;
    let mut rows = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let preds: Vec<PredictedLabeling> = frames
            .iter()
            .zip(&overlaps)
            .map(|((f, _), o)| labeling_from_overlaps(f.frame_id, o, t, classes))
            .collect();
        let items: Vec<_> = frames.iter().zip(&preds).map(|((f, m), p)| (*f, p, *m)).collect();
        rows.push(SweepRow {
            t_ov: t,
            report: mask_average_precision(&items, classes, exec)?,
        });
    }
    Ok(SweepTable { rows })
}

/// `a:b:step` (inclusive) or a comma-separated list.
pub fn parse_thresholds(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Parameter(format!("invalid threshold list {spec:?}"));
    if spec.contains(':') {
        let parts: Vec<f64> = spec
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let [a, b, step] = parts[..] else { return Err(bad()) };
        if !(step > 0.0) || b < a {
            return Err(bad());
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        // Round to the step's precision so that 0.05:0.95:0.05 yields 0.35
        // rather than 0.35000000000000003.
        Ok((0..=n).map(|i| ((a + step * i as f64) * 1e9).round() / 1e9).collect())
    } else {
        spec.split(',').map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect()
    }
}
