//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use stxpn::bps::{BpsConfig, RoiVotes};
use stxpn::geometry::Rect;
use stxpn::{ClassId, ClassTable, InstanceId, InstanceLabeling, PredictedLabeling, Stixel, StixelFrame};

pub fn stixel(id: u32, r: Rect, label: ClassId) -> Stixel {
    Stixel {
        stixel_id: id,
        x: (r.u_tl + r.u_br) / 20.0,
        y: 0.0,
        z: 10.0 + id as f64,
        w: (r.u_br - r.u_tl) / 10.0,
        h: (r.v_br - r.v_tl) / 10.0,
        u_tl: r.u_tl,
        v_tl: r.v_tl,
        u_br: r.u_br,
        v_br: r.v_br,
        label,
        label_conf: 1.0,
    }
}

/// Random frame with integer rectangles and unique, shuffled ids.
pub fn random_frame(rng: &mut ChaCha8Rng, frame_id: u64, n: usize, width: u32, height: u32) -> StixelFrame {
    let mut ids: Vec<u32> = (0..n as u32 * 3).collect();
    for i in (1..ids.len()).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    let stixels = (0..n)
        .map(|k| {
            let u0 = rng.random_range(0..width - 1);
            let v0 = rng.random_range(0..height - 1);
            let u1 = rng.random_range(u0 + 1..=width.min(u0 + 12));
            let v1 = rng.random_range(v0 + 1..=height);
            stixel(ids[k], Rect::new(u0 as f64, v0 as f64, u1 as f64, v1 as f64), rng.random_range(0..8))
        })
        .collect();
    StixelFrame::new(frame_id, width, height, stixels)
}

/// Complete-linkage clustering recomputing every cluster distance from the
/// member points at every step.
pub fn hac_reference(points: &[(f64, f64)], mu: f64) -> Vec<Vec<usize>> {
    let dist = |a: usize, b: usize| {
        let (dx, dz) = (points[a].0 - points[b].0, points[a].1 - points[b].1);
        (dx * dx + dz * dz).sqrt()
    };
    let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut d = 0.0f64;
                for &p in &clusters[a] {
                    for &q in &clusters[b] {
                        d = d.max(dist(p, q));
                    }
                }
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, a, b));
                }
            }
        }
        match best {
            Some((d, a, b)) if d <= mu => {
                let moved = clusters.remove(b);
                clusters[a].extend(moved);
                clusters[a].sort_unstable();
            }
            _ => break,
        }
    }
    clusters
}

/// Subpixels per pixel side used by the rasterization oracle; exact for
/// coordinates that are multiples of `1 / SUB`.
pub const SUB: usize = 4;

fn cells(r: &Rect, width: u32, height: u32) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for i in 0..width as usize * SUB {
        let u = (i as f64 + 0.5) / SUB as f64;
        if !(u >= r.u_tl && u < r.u_br) {
            continue;
        }
        for j in 0..height as usize * SUB {
            let v = (j as f64 + 0.5) / SUB as f64;
            if v >= r.v_tl && v < r.v_br {
                out.insert((i, j));
            }
        }
    }
    out
}

/// Captured Stixel ids by counting subpixel cells.
pub fn capture_reference(frame: &StixelFrame, roi: &Rect, t_roi: f64) -> Vec<u32> {
    let inside = cells(roi, frame.width, frame.height);
    frame
        .stixels
        .iter()
        .filter(|s| {
            let own = cells(&s.rect(), frame.width, frame.height);
            let both = own.intersection(&inside).count();
            !own.is_empty() && both as f64 / own.len() as f64 > t_roi
        })
        .map(|s| s.stixel_id)
        .collect()
}

/// Selection resolved Stixel by Stixel directly from the RoIs.
pub fn bps_reference(frame: &StixelFrame, rois: &[RoiVotes], cfg: &BpsConfig) -> PredictedLabeling {
    let mut order: Vec<usize> = (0..rois.len()).collect();
    order.sort_by(|&a, &b| rois[b].c_bb.partial_cmp(&rois[a].c_bb).unwrap().then(a.cmp(&b)));
    let mut winner: BTreeMap<u32, Option<usize>> = BTreeMap::new();
    for s in &frame.stixels {
        let mut best: Option<(usize, f64)> = None;
        for (rank, &r) in order.iter().enumerate() {
            let roi = &rois[r];
            let Some(pos) = roi.stixel_ids.iter().position(|&id| id == s.stixel_id) else {
                continue;
            };
            let pc = roi.pc[pos];
            if !(pc > cfg.t_conf) {
                continue;
            }
            let score = cfg.w_bb * roi.c_bb + cfg.w_pc * pc;
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((rank, score));
            }
        }
        winner.insert(s.stixel_id, best.map(|(rank, _)| rank));
    }
    let surviving: BTreeSet<usize> = winner.values().flatten().copied().collect();
    let mut ids = BTreeMap::new();
    let mut scores = BTreeMap::new();
    let mut next: BTreeMap<ClassId, u32> = BTreeMap::new();
    for rank in surviving {
        let roi = &rois[order[rank]];
        let c = next.entry(roi.box_label).or_insert(0);
        let id = InstanceId::object(roi.box_label, *c);
        *c += 1;
        ids.insert(rank, id);
        scores.insert(id, roi.c_bb);
    }
    let mut labeling = InstanceLabeling::new(frame.frame_id);
    for (sid, w) in winner {
        labeling.labels.insert(sid, w.map_or(InstanceId::Background, |r| ids[&r]));
    }
    PredictedLabeling { labeling, scores }
}

/// Per merged class: ground-truth count and AP at each IoU threshold, from
/// rasterized Stixel regions, greedy matching and a brute-force maximum over
/// the precision of every cutoff.
pub fn ap_reference(
    frames: &[(&StixelFrame, &PredictedLabeling, &InstanceLabeling)],
    classes: &ClassTable,
    thresholds: &[f64],
) -> BTreeMap<ClassId, (usize, Vec<f64>)> {
    struct Inst {
        class: ClassId,
        score: f64,
        pixels: BTreeSet<(usize, usize)>,
    }
    let evaluated: BTreeSet<ClassId> = classes
        .evaluated()
        .map(|c| classes.merged(c))
        .collect();
    let regions = |frame: &StixelFrame, labeling: &InstanceLabeling, scores: Option<&PredictedLabeling>| -> Vec<Inst> {
        labeling
            .instances()
            .into_iter()
            .filter_map(|(id, sids)| {
                let class = classes.merged(id.class()?);
                if !evaluated.contains(&class) {
                    return None;
                }
                let mut pixels = BTreeSet::new();
                for sid in sids {
                    pixels.extend(cells(&frame.get(sid).unwrap().rect(), frame.width, frame.height));
                }
                Some(Inst {
                    class,
                    score: scores.map_or(1.0, |p| p.score(&id)),
                    pixels,
                })
            })
            .collect()
    };
    let data: Vec<(Vec<Inst>, Vec<Inst>)> = frames
        .iter()
        .map(|(f, p, g)| (regions(f, &p.labeling, Some(p)), regions(f, g, None)))
        .collect();
    let iou = |a: &Inst, b: &Inst| {
        let inter = a.pixels.intersection(&b.pixels).count();
        let union = a.pixels.len() + b.pixels.len() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    };
    let before = |a: &Inst, b: &Inst| a.score > b.score || (a.score == b.score && a.pixels.len() > b.pixels.len());

    let mut out = BTreeMap::new();
    for &class in &evaluated {
        let n_gt: usize = data.iter().map(|(_, g)| g.iter().filter(|x| x.class == class).count()).sum();
        let mut aps = Vec::new();
        for &t in thresholds {
            // Hits per (frame, prediction), from greedy matching per frame.
            let mut hit: BTreeMap<(usize, usize), bool> = BTreeMap::new();
            for (fi, (preds, gts)) in data.iter().enumerate() {
                let mut order: Vec<usize> = (0..preds.len()).collect();
                order.sort_by(|&a, &b| {
                    if before(&preds[a], &preds[b]) {
                        std::cmp::Ordering::Less
                    } else if before(&preds[b], &preds[a]) {
                        std::cmp::Ordering::Greater
                    } else {
                        a.cmp(&b)
                    }
                });
                let mut taken = vec![false; gts.len()];
                for p in order {
                    let mut best: Option<(usize, f64)> = None;
                    for (g, gt) in gts.iter().enumerate() {
                        let v = iou(&preds[p], gt);
                        if gt.class == preds[p].class && !taken[g] && v > t && best.is_none_or(|(_, b)| v > b) {
                            best = Some((g, v));
                        }
                    }
                    if let Some((g, _)) = best {
                        taken[g] = true;
                    }
                    hit.insert((fi, p), best.is_some());
                }
            }
            let mut ranked: Vec<(usize, usize)> = hit
                .keys()
                .copied()
                .filter(|&(f, p)| data[f].0[p].class == class)
                .collect();
            ranked.sort_by(|&(fa, pa), &(fb, pb)| {
                let (a, b) = (&data[fa].0[pa], &data[fb].0[pb]);
                if before(a, b) {
                    std::cmp::Ordering::Less
                } else if before(b, a) {
                    std::cmp::Ordering::Greater
                } else {
                    (fa, pa).cmp(&(fb, pb))
                }
            });
            let mut precision = Vec::new();
            let mut recall = Vec::new();
            let mut tp = 0;
            for (k, key) in ranked.iter().enumerate() {
                tp += usize::from(hit[key]);
                precision.push(tp as f64 / (k + 1) as f64);
                recall.push(if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 });
            }
            let mut ap = 0.0;
            let mut prev = 0.0;
            for k in 0..ranked.len() {
                if recall[k] > prev {
                    let best = (0..ranked.len())
                        .filter(|&j| recall[j] >= recall[k])
                        .map(|j| precision[j])
                        .fold(0.0, f64::max);
                    ap += (recall[k] - prev) * best;
                    prev = recall[k];
                }
            }
            aps.push(ap);
        }
        out.insert(class, (n_gt, aps));
    }
    out
}
