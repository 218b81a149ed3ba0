use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::iou::{mask_overlaps, mask_regions};
use crate::exec::Execution;
use crate::geometry::{union_area, union_overlap, Rect};
use crate::ingest::mask::InstanceMask;
use crate::ingest::Dataset;
use crate::types::{ClassId, ClassTable, InstanceId, InstanceLabeling, PredictedLabeling, StixelFrame};

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalInstance {
    pub id: InstanceId,
    /// Merged class.
    pub class: ClassId,
    pub score: f64,
    pub area: f64,
}

/// Predictions and ground truth of one frame with their pairwise IoU.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEval {
    pub frame_id: u64,
    pub predictions: Vec<EvalInstance>,
    pub ground_truth: Vec<EvalInstance>,
    /// `iou[p][g]`, zero across classes.
    pub iou: Vec<Vec<f64>>,
}

/// Outcome of greedy matching at one IoU threshold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    /// Matched ground-truth index per prediction.
    pub prediction: Vec<Option<usize>>,
    pub gt_matched: Vec<bool>,
}

impl Matching {
    pub fn true_positives(&self) -> usize {
        self.prediction.iter().filter(|m| m.is_some()).count()
    }

    pub fn false_positives(&self) -> usize {
        self.prediction.len() - self.true_positives()
    }

    pub fn false_negatives(&self) -> usize {
        self.gt_matched.iter().filter(|&&m| !m).count()
    }
}

/// Ranking used both for greedy matching and for the PR curve: score
/// descending, then larger region first.
fn rank(a: &EvalInstance, b: &EvalInstance) -> Ordering {
    b.score.total_cmp(&a.score).then(b.area.total_cmp(&a.area))
}

/// Greedy matching: predictions in rank order each take the unmatched
/// same-class ground truth of highest IoU, provided it exceeds `threshold`.
pub fn match_instances(frame: &FrameEval, threshold: f64) -> Matching {
    let mut order: Vec<usize> = (0..frame.predictions.len()).collect();
    order.sort_by(|&a, &b| rank(&frame.predictions[a], &frame.predictions[b]).then(a.cmp(&b)));
    let mut gt_matched = vec![false; frame.ground_truth.len()];
    let mut prediction = vec![None; frame.predictions.len()];
    for p in order {
        let class = frame.predictions[p].class;
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in frame.ground_truth.iter().enumerate() {
            let iou = frame.iou[p][g];
            if gt.class != class || gt_matched[g] || !(iou > threshold) {
                continue;
            }
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            gt_matched[g] = true;
            prediction[p] = Some(g);
        }
    }
    Matching { prediction, gt_matched }
}

/// Area under the all-point interpolated precision-recall curve of a ranked
/// list of hits.
pub fn all_point_ap(hits: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, &h) in hits.iter().enumerate() {
        tp += usize::from(h);
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for k in 0..hits.len() {
        if recall[k] > prev {
            ap += (recall[k] - prev) * precision[k];
            prev = recall[k];
        }
    }
    ap
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAp {
    pub class: ClassId,
    pub name: String,
    pub ground_truth: usize,
    pub predictions: usize,
    pub ap_per_threshold: Vec<f64>,
    pub ap: f64,
    pub ap50: f64,
}

impl ClassAp {
    /// Classes without ground truth do not enter the means.
    pub fn included(&self) -> bool {
        self.ground_truth > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApReport {
    pub thresholds: Vec<f64>,
    pub classes: Vec<ClassAp>,
    pub mean_ap: f64,
    pub mean_ap50: f64,
    /// Totals over all classes, one entry per threshold.
    pub counts: Vec<MatchCounts>,
}

impl ApReport {
    pub fn class(&self, class: ClassId) -> Option<&ClassAp> {
        self.classes.iter().find(|c| c.class == class)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,ap,ap50,ground_truth,predictions\n");
        for c in &self.classes {
            if c.included() {
                s.push_str(&format!("{},{:.6},{:.6},{},{}\n", c.name, c.ap, c.ap50, c.ground_truth, c.predictions));
            } else {
                s.push_str(&format!("{},,,{},{}\n", c.name, c.ground_truth, c.predictions));
            }
        }
        let gt: usize = self.classes.iter().map(|c| c.ground_truth).sum();
        let pred: usize = self.classes.iter().map(|c| c.predictions).sum();
        s.push_str(&format!("mean,{:.6},{:.6},{},{}\n", self.mean_ap, self.mean_ap50, gt, pred));
        s
    }

    pub fn counts_csv(&self) -> String {
        let mut s = String::from("iou_threshold,tp,fp,fn\n");
        for (t, c) in self.thresholds.iter().zip(&self.counts) {
            s.push_str(&format!("{t:.2},{},{},{}\n", c.tp, c.fp, c.fn_));
        }
        s
    }
}

impl fmt::Display for ApReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>7} {:>7} {:>6} {:>6}", "class", "AP", "AP50", "gt", "pred")?;
        for c in &self.classes {
            if c.included() {
                writeln!(
                    f,
                    "{:<12} {:>7.2} {:>7.2} {:>6} {:>6}",
                    c.name,
                    100.0 * c.ap,
                    100.0 * c.ap50,
                    c.ground_truth,
                    c.predictions
                )?;
            } else {
                writeln!(f, "{:<12} {:>7} {:>7} {:>6} {:>6}", c.name, "-", "-", c.ground_truth, c.predictions)?;
            }
        }
        writeln!(f, "{:<12} {:>7.2} {:>7.2}", "mean", 100.0 * self.mean_ap, 100.0 * self.mean_ap50)
    }
}

/// Merged evaluated classes in index order.
pub fn evaluated_classes(classes: &ClassTable) -> Vec<ClassId> {
    let set: BTreeSet<ClassId> = classes
        .evaluated()
        .map(|c| classes.merged(c))
        .filter(|&c| classes.classes.get(c).is_some_and(|i| i.evaluated))
        .collect();
    set.into_iter().collect()
}

/// AP over a set of frames at the standard thresholds.
pub fn evaluate(frames: &[FrameEval], classes: &ClassTable, exec: Execution) -> ApReport {
    let thresholds = iou_thresholds();
    let matchings: Vec<Vec<Matching>> = exec.map(frames, |f| thresholds.iter().map(|&t| match_instances(f, t)).collect());
    let evaluated = evaluated_classes(classes);
    let mut counts = vec![MatchCounts { tp: 0, fp: 0, fn_: 0 }; thresholds.len()];
    for m in &matchings {
        for (c, mt) in counts.iter_mut().zip(m) {
            c.tp += mt.true_positives();
            c.fp += mt.false_positives();
            c.fn_ += mt.false_negatives();
        }
    }

    let mut per_class = Vec::with_capacity(evaluated.len());
    for &class in &evaluated {
        // (frame, prediction) pairs of this class in global rank order.
        let mut ranked: Vec<(usize, usize)> = Vec::new();
        let mut n_gt = 0;
        for (fi, f) in frames.iter().enumerate() {
            n_gt += f.ground_truth.iter().filter(|g| g.class == class).count();
            ranked.extend(
                f.predictions
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| p.class == class)
                    .map(|(pi, _)| (fi, pi)),
            );
        }
        ranked.sort_by(|&(fa, pa), &(fb, pb)| {
            rank(&frames[fa].predictions[pa], &frames[fb].predictions[pb])
                .then(fa.cmp(&fb))
                .then(pa.cmp(&pb))
        });
        let ap_per_threshold: Vec<f64> = (0..thresholds.len())
            .map(|t| {
                let hits: Vec<bool> = ranked
                    .iter()
                    .map(|&(f, p)| matchings[f][t].prediction[p].is_some())
                    .collect();
                all_point_ap(&hits, n_gt)
            })
            .collect();
        let ap = ap_per_threshold.iter().sum::<f64>() / thresholds.len() as f64;
        per_class.push(ClassAp {
            class,
            name: classes.name(class).to_string(),
            ground_truth: n_gt,
            predictions: ranked.len(),
            ap50: ap_per_threshold[0],
            ap_per_threshold,
            ap,
        });
    }
    let included: Vec<&ClassAp> = per_class.iter().filter(|c| c.included()).collect();
    let mean = |f: fn(&ClassAp) -> f64| {
        if included.is_empty() {
            0.0
        } else {
            included.iter().map(|c| f(c)).sum::<f64>() / included.len() as f64
        }
    };
    let mean_ap = mean(|c| c.ap);
    let mean_ap50 = mean(|c| c.ap50);
    ApReport {
        thresholds,
        classes: per_class,
        mean_ap,
        mean_ap50,
        counts,
    }
}

fn instances_of(
    labeling: &InstanceLabeling,
    classes: &ClassTable,
    evaluated: &BTreeSet<ClassId>,
) -> Vec<(InstanceId, ClassId, Vec<u32>)> {
    labeling
        .instances()
        .into_iter()
        .filter_map(|(id, ids)| {
            let class = classes.merged(id.class()?);
            evaluated.contains(&class).then_some((id, class, ids))
        })
        .collect()
}

fn bounding(rects: &[Rect]) -> Option<Rect> {
    rects.iter().copied().reduce(|a, b| {
        Rect::new(a.u_tl.min(b.u_tl), a.v_tl.min(b.v_tl), a.u_br.max(b.u_br), a.v_br.max(b.v_br))
    })
}

/// Stixel-level evaluation input: regions are unions of Stixel rectangles.
pub fn stixel_frame_eval(
    frame: &StixelFrame,
    prediction: &PredictedLabeling,
    gt: &InstanceLabeling,
    classes: &ClassTable,
) -> FrameEval {
    let evaluated: BTreeSet<ClassId> = evaluated_classes(classes).into_iter().collect();
    let rects_of = |ids: &[u32]| -> Vec<Rect> { ids.iter().filter_map(|&i| frame.get(i)).map(|s| s.rect()).collect() };
    let pred = instances_of(&prediction.labeling, classes, &evaluated);
    let truth = instances_of(gt, classes, &evaluated);
    let pred_rects: Vec<Vec<Rect>> = pred.iter().map(|(_, _, ids)| rects_of(ids)).collect();
    let gt_rects: Vec<Vec<Rect>> = truth.iter().map(|(_, _, ids)| rects_of(ids)).collect();
    let pred_bb: Vec<Option<Rect>> = pred_rects.iter().map(|r| bounding(r)).collect();
    let gt_bb: Vec<Option<Rect>> = gt_rects.iter().map(|r| bounding(r)).collect();
    let iou = (0..pred.len())
        .map(|p| {
            (0..truth.len())
                .map(|g| {
                    let overlapping = match (pred_bb[p], gt_bb[g]) {
                        (Some(a), Some(b)) => a.intersection_area(&b) > 0.0,
                        _ => false,
                    };
                    if pred[p].1 != truth[g].1 || !overlapping {
                        return 0.0;
                    }
                    let (i, u) = union_overlap(&pred_rects[p], &gt_rects[g]);
                    if u > 0.0 {
                        i / u
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    FrameEval {
        frame_id: frame.frame_id,
        predictions: pred
            .iter()
            .zip(&pred_rects)
            .map(|((id, class, _), r)| EvalInstance {
                id: *id,
                class: *class,
                score: prediction.score(id),
                area: union_area(r),
            })
            .collect(),
        ground_truth: truth
            .iter()
            .zip(&gt_rects)
            .map(|((id, class, _), r)| EvalInstance {
                id: *id,
                class: *class,
                score: 1.0,
                area: union_area(r),
            })
            .collect(),
        iou,
    }
}

/// Mask-level evaluation input: predicted Stixel regions against the pixel
/// regions of the instance mask.
pub fn mask_frame_eval(
    frame: &StixelFrame,
    prediction: &PredictedLabeling,
    mask: &InstanceMask,
    classes: &ClassTable,
) -> Result<FrameEval> {
    if mask.width != frame.width as usize || mask.height != frame.height as usize {
        return Err(Error::Invalid(format!(
            "frame {}: mask is {}x{}, frame is {}x{}",
            frame.frame_id, mask.width, mask.height, frame.width, frame.height
        )));
    }
    let evaluated: BTreeSet<ClassId> = evaluated_classes(classes).into_iter().collect();
    let pred = instances_of(&prediction.labeling, classes, &evaluated);
    let regions: Vec<_> = mask_regions(mask, classes)
        .into_iter()
        .map(|mut r| {
            r.class = classes.merged(r.class);
            r
        })
        .filter(|r| evaluated.contains(&r.class))
        .collect();
    let sets: Vec<Vec<u32>> = pred.iter().map(|(_, _, ids)| ids.clone()).collect();
    let (areas, inter) = mask_overlaps(frame, &sets, mask, &regions);
    let iou = (0..pred.len())
        .map(|p| {
            regions
                .iter()
                .enumerate()
                .map(|(g, r)| {
                    if r.class != pred[p].1 || inter[p][g] == 0 {
                        return 0.0;
                    }
                    inter[p][g] as f64 / (areas[p] + r.pixels - inter[p][g]) as f64
                })
                .collect()
        })
        .collect();
    Ok(FrameEval {
        frame_id: frame.frame_id,
        predictions: pred
            .iter()
            .zip(&areas)
            .map(|((id, class, _), &a)| EvalInstance {
                id: *id,
                class: *class,
                score: prediction.score(id),
                area: a as f64,
            })
            .collect(),
        ground_truth: regions
            .iter()
            .map(|r| EvalInstance {
                id: InstanceId::object(r.class, u32::from(r.code) % 1000),
                class: r.class,
                score: 1.0,
                area: r.pixels as f64,
            })
            .collect(),
        iou,
    })
}

/// Stixel-level AP of predictions against a dataset's ground truth.
pub fn average_precision(dataset: &Dataset, predictions: &[PredictedLabeling], exec: Execution) -> Result<ApReport> {
    let by_frame: BTreeMap<u64, &PredictedLabeling> =
        predictions.iter().map(|p| (p.labeling.frame_id, p)).collect();
    let mut pairs = Vec::with_capacity(dataset.samples.len());
    for s in &dataset.samples {
        let p = by_frame
            .get(&s.frame.frame_id)
            .ok_or_else(|| Error::Invalid(format!("no prediction for frame {}", s.frame.frame_id)))?;
        pairs.push((s, *p));
    }
    let frames = exec.map(&pairs, |(s, p)| stixel_frame_eval(&s.frame, p, &s.gt, &dataset.classes));
    Ok(evaluate(&frames, &dataset.classes, exec))
}

/// Mask-level AP of Stixel labelings against pixel instance masks.
pub fn mask_average_precision(
    items: &[(&StixelFrame, &PredictedLabeling, &InstanceMask)],
    classes: &ClassTable,
    exec: Execution,
) -> Result<ApReport> {
    let frames: Result<Vec<FrameEval>> = exec
        .map(items, |(f, p, m)| mask_frame_eval(f, p, m, classes))
        .into_iter()
        .collect();
    Ok(evaluate(&frames?, classes, exec))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(class: ClassId, counter: u32, score: f64) -> EvalInstance {
        EvalInstance {
            id: InstanceId::object(class, counter),
            class,
            score,
            area: 1.0,
        }
    }

    #[test]
    fn all_point_interpolation() {
        // Ranked hits T F T with 2 GT: precision 1, .5, .667; recall .5, .5, 1.
        let ap = all_point_ap(&[true, false, true], 2);
        assert!((ap - (0.5 * 1.0 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
        assert_eq!(all_point_ap(&[], 3), 0.0);
        assert_eq!(all_point_ap(&[true, true], 2), 1.0);
    }

    #[test]
    fn competing_predictions() {
        let frame = FrameEval {
            frame_id: 0,
            predictions: vec![inst(2, 0, 0.6), inst(2, 1, 0.9)],
            ground_truth: vec![inst(2, 0, 1.0)],
            iou: vec![vec![0.9], vec![0.7]],
        };
        let m = match_instances(&frame, 0.5);
        assert_eq!(m.prediction, vec![None, Some(0)]);
        assert_eq!((m.true_positives(), m.false_positives(), m.false_negatives()), (1, 1, 0));
    }

    #[test]
    fn never_matches_across_classes() {
        let frame = FrameEval {
            frame_id: 0,
            predictions: vec![inst(0, 0, 0.9)],
            ground_truth: vec![inst(2, 0, 1.0)],
            iou: vec![vec![1.0]],
        };
        assert_eq!(match_instances(&frame, 0.5).prediction, vec![None]);
    }

    #[test]
    fn empty_prediction_counts_all_gt_missed() {
        let frame = FrameEval {
            frame_id: 0,
            predictions: vec![],
            ground_truth: vec![inst(2, 0, 1.0), inst(0, 0, 1.0)],
            iou: vec![],
        };
        assert_eq!(match_instances(&frame, 0.5).false_negatives(), 2);
        let r = evaluate(&[frame], &ClassTable::cityscapes(), Execution::Sequential);
        assert_eq!(r.class(2).unwrap().ap, 0.0);
        assert_eq!(r.classes.iter().filter(|c| c.included()).count(), 2);
    }

    #[test]
    fn threshold_boundary_is_strict() {
        let frame = FrameEval {
            frame_id: 0,
            predictions: vec![inst(2, 0, 0.9)],
            ground_truth: vec![inst(2, 0, 1.0)],
            iou: vec![vec![0.5]],
        };
        assert_eq!(match_instances(&frame, 0.5).prediction, vec![None]);
    }

    #[test]
    fn merged_classes_are_evaluated_once() {
        let classes = ClassTable::cityscapes();
        let names: Vec<&str> = evaluated_classes(&classes).iter().map(|&c| classes.name(c)).collect();
        assert_eq!(names, ["person", "rider", "car", "truck", "bus", "motorcycle", "bicycle"]);
    }
}
