//! Best prediction selection: fuse per-RoI Stixel predictions into one
//! instance labeling per frame.
//!
//! RoIs are first ordered by box confidence (descending, stable), so a lower
//! RoI index means a more confident box. A Stixel seen by no RoI is
//! background; otherwise only votes with `pc > t_conf` compete, and the vote
//! maximizing `w_bb * c_bb + w_pc * pc` wins, ties to the lower RoI index.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ClassId, InstanceId, InstanceLabeling, PredictedLabeling, StixelFrame};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BpsConfig {
    pub t_conf: f64,
    pub w_bb: f64,
    pub w_pc: f64,
}

impl Default for BpsConfig {
    fn default() -> Self {
        BpsConfig {
            t_conf: 0.5,
            w_bb: 0.75,
            w_pc: 0.25,
        }
    }
}

impl BpsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_bb >= 0.0 && self.w_pc >= 0.0) || (self.w_bb + self.w_pc - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!(
                "BPS weights must be >= 0 and sum to 1, got {} and {}",
                self.w_bb, self.w_pc
            )));
        }
        if !self.t_conf.is_finite() {
            return Err(Error::Parameter("t_conf must be finite".into()));
        }
        Ok(())
    }

    pub fn score(&self, vote: &Vote) -> f64 {
        self.w_bb * vote.c_bb + self.w_pc * vote.pc
    }
}

/// Per-Stixel predictions of one RoI.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiVotes {
    pub box_label: ClassId,
    pub c_bb: f64,
    pub stixel_ids: Vec<u32>,
    pub pc: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vote {
    pub stixel_id: u32,
    pub roi: usize,
    pub pc: f64,
    pub c_bb: f64,
    pub box_label: ClassId,
}

/// Stable order of RoIs by descending box confidence.
pub fn confidence_order(rois: &[RoiVotes]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rois.len()).collect();
    order.sort_by(|&a, &b| rois[b].c_bb.total_cmp(&rois[a].c_bb));
    order
}

/// Vote lists for every Stixel of the frame. RoI indices refer to the
/// order in which `rois` is given.
pub fn collect_votes(frame: &StixelFrame, rois: &[RoiVotes]) -> BTreeMap<u32, Vec<Vote>> {
    let mut votes: BTreeMap<u32, Vec<Vote>> = frame.stixels.iter().map(|s| (s.stixel_id, Vec::new())).collect();
    for (r, roi) in rois.iter().enumerate() {
        for (&sid, &pc) in roi.stixel_ids.iter().zip(&roi.pc) {
            if let Some(list) = votes.get_mut(&sid) {
                list.push(Vote {
                    stixel_id: sid,
                    roi: r,
                    pc,
                    c_bb: roi.c_bb,
                    box_label: roi.box_label,
                });
            }
        }
    }
    votes
}

/// Winning vote of one Stixel.
fn winner<'a>(votes: &'a [Vote], config: &BpsConfig) -> Option<&'a Vote> {
    let mut best: Option<(&Vote, f64)> = None;
    for v in votes.iter().filter(|v| v.pc > config.t_conf) {
        let s = config.score(v);
        let better = match best {
            None => true,
            Some((b, bs)) => s > bs || (s == bs && v.roi < b.roi),
        };
        if better {
            best = Some((v, s));
        }
    }
    best.map(|(v, _)| v)
}

/// Labeling from vote lists. Instance counters are dense per class over
/// RoIs that win at least one Stixel, in RoI index order; an instance's
/// score is its box confidence.
pub fn select(frame_id: u64, votes: &BTreeMap<u32, Vec<Vote>>, config: &BpsConfig) -> PredictedLabeling {
    let winners: Vec<(u32, Option<Vote>)> = votes.iter().map(|(&sid, v)| (sid, winner(v, config).copied())).collect();
    let mut surviving: BTreeMap<usize, (ClassId, f64)> = BTreeMap::new();
    for (_, w) in &winners {
        if let Some(v) = w {
            surviving.insert(v.roi, (v.box_label, v.c_bb));
        }
    }
    let mut counters: BTreeMap<ClassId, u32> = BTreeMap::new();
    let mut ids: BTreeMap<usize, InstanceId> = BTreeMap::new();
    let mut scores = BTreeMap::new();
    for (roi, (label, c_bb)) in surviving {
        let c = counters.entry(label).or_insert(0);
        let id = InstanceId::object(label, *c);
        *c += 1;
        ids.insert(roi, id);
        scores.insert(id, c_bb);
    }
    let mut labeling = InstanceLabeling::new(frame_id);
    for (sid, w) in winners {
        labeling
            .labels
            .insert(sid, w.map_or(InstanceId::Background, |v| ids[&v.roi]));
    }
    PredictedLabeling { labeling, scores }
}

/// Sort RoIs by confidence, collect votes and select.
pub fn bps(frame: &StixelFrame, rois: &[RoiVotes], config: &BpsConfig) -> PredictedLabeling {
    let order = confidence_order(rois);
    let sorted: Vec<RoiVotes> = order.iter().map(|&i| rois[i].clone()).collect();
    select(frame.frame_id, &collect_votes(frame, &sorted), config)
}

/// Exhaustive reference for [`select`]: every Stixel is resolved on its own
/// by checking each passing vote against all others.
pub fn bps_oracle(frame_id: u64, votes: &BTreeMap<u32, Vec<Vote>>, config: &BpsConfig) -> PredictedLabeling {
    let beats = |a: &Vote, b: &Vote| {
        let (sa, sb) = (config.w_bb * a.c_bb + config.w_pc * a.pc, config.w_bb * b.c_bb + config.w_pc * b.pc);
        sa > sb || (sa == sb && a.roi < b.roi)
    };
    let mut choice: BTreeMap<u32, Option<Vote>> = BTreeMap::new();
    for (&sid, list) in votes {
        let passing: Vec<&Vote> = list.iter().filter(|v| v.pc > config.t_conf).collect();
        let best = passing
            .iter()
            .find(|v| passing.iter().all(|o| std::ptr::eq(**v, *o) || beats(v, o)))
            .map(|v| **v);
        choice.insert(sid, best);
    }
    let max_roi = votes.values().flatten().map(|v| v.roi + 1).max().unwrap_or(0);
    let survives = |r: usize| choice.values().any(|c| c.is_some_and(|v| v.roi == r));
    let label_of = |r: usize| choice.values().flatten().find(|v| v.roi == r).map(|v| (v.box_label, v.c_bb));
    let mut labeling = InstanceLabeling::new(frame_id);
    let mut scores = BTreeMap::new();
    for (&sid, c) in &choice {
        let id = match c {
            None => InstanceId::Background,
            Some(v) => {
                let earlier = (0..v.roi)
                    .filter(|&r| survives(r) && label_of(r).map(|l| l.0) == Some(v.box_label))
                    .count();
                InstanceId::object(v.box_label, earlier as u32)
            }
        };
        labeling.labels.insert(sid, id);
    }
    for r in 0..max_roi {
        if let Some((label, c_bb)) = label_of(r) {
            let earlier = (0..r).filter(|&q| label_of(q).map(|l| l.0) == Some(label)).count();
            scores.insert(InstanceId::object(label, earlier as u32), c_bb);
        }
    }
    PredictedLabeling { labeling, scores }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Stixel;
    use proptest::prelude::*;

    fn frame(n: u32) -> StixelFrame {
        let stixels = (0..n)
            .map(|i| Stixel {
                stixel_id: i,
                x: 0.0,
                y: 0.0,
                z: 10.0,
                w: 1.0,
                h: 1.0,
                u_tl: i as f64,
                v_tl: 0.0,
                u_br: i as f64 + 1.0,
                v_br: 10.0,
                label: 2,
                label_conf: 1.0,
            })
            .collect();
        StixelFrame::new(0, 64, 16, stixels)
    }

    fn roi(label: ClassId, c_bb: f64, ids: &[u32], pc: &[f64]) -> RoiVotes {
        RoiVotes {
            box_label: label,
            c_bb,
            stixel_ids: ids.to_vec(),
            pc: pc.to_vec(),
        }
    }

    #[test]
    fn vote_cases() {
        let f = frame(3);
        let rois = [
            roi(2, 0.9, &[1, 2], &[0.6, 0.6]),
            roi(2, 0.8, &[2], &[0.6]),
            roi(2, 0.7, &[2], &[0.6]),
        ];
        let v = collect_votes(&f, &rois);
        assert_eq!(v[&0].len(), 0);
        assert_eq!(v[&1].len(), 1);
        assert_eq!(v[&2].len(), 3);
    }

    #[test]
    fn single_vote_threshold() {
        let f = frame(1);
        let l = bps(&f, &[roi(2, 0.9, &[0], &[0.6])], &BpsConfig::default());
        assert_eq!(l.labeling.get(0), InstanceId::object(2, 0));
        let l = bps(&f, &[roi(2, 0.9, &[0], &[0.5])], &BpsConfig::default());
        assert_eq!(l.labeling.get(0), InstanceId::Background);
    }

    #[test]
    fn weighted_sum_decides() {
        let f = frame(1);
        // Scores 0.75*0.5 + 0.25*0.9 = 0.60 and 0.75*0.8 + 0.25*0.6 = 0.75.
        let rois = [roi(2, 0.5, &[0], &[0.9]), roi(0, 0.8, &[0], &[0.6])];
        let l = bps(&f, &rois, &BpsConfig::default());
        assert_eq!(l.labeling.get(0), InstanceId::object(0, 0));
        assert_eq!(l.score(&InstanceId::object(0, 0)), 0.8);
        assert_eq!(l.scores.len(), 1);
    }

    #[test]
    fn no_passing_vote_is_background() {
        let f = frame(1);
        let rois = [roi(2, 0.5, &[0], &[0.4]), roi(2, 0.8, &[0], &[0.4])];
        assert_eq!(bps(&f, &rois, &BpsConfig::default()).labeling.get(0), InstanceId::Background);
    }

    #[test]
    fn empty_frame() {
        let f = frame(0);
        let v = collect_votes(&f, &[]);
        assert_eq!(select(0, &v, &BpsConfig::default()), bps_oracle(0, &v, &BpsConfig::default()));
        assert!(select(0, &v, &BpsConfig::default()).labeling.labels.is_empty());
    }

    #[test]
    fn weights_must_sum_to_one() {
        assert!(BpsConfig { w_bb: 0.5, w_pc: 0.6, ..BpsConfig::default() }.validate().is_err());
        assert!(BpsConfig::default().validate().is_ok());
    }

    #[test]
    fn identical_rois_give_same_partition() {
        let f = frame(4);
        let a = roi(2, 0.7, &[0, 1, 2], &[0.9, 0.8, 0.3]);
        let b = roi(2, 0.7, &[0, 1, 2], &[0.9, 0.8, 0.3]);
        let c = roi(0, 0.6, &[2, 3], &[0.9, 0.9]);
        let cfg = BpsConfig::default();
        let p1 = bps(&f, &[a.clone(), b.clone(), c.clone()], &cfg).labeling.canonical();
        let p2 = bps(&f, &[c, b, a], &cfg).labeling.canonical();
        assert_eq!(p1, p2);
    }

    fn rois_strategy(n: u32) -> impl Strategy<Value = Vec<RoiVotes>> {
        let one = (
            0usize..3,
            0u32..=20,
            prop::collection::btree_map(0..n.max(1), 0u32..=10, 0..=n as usize),
        )
            .prop_map(|(label, c, m)| RoiVotes {
                box_label: label,
                c_bb: c as f64 / 20.0,
                stixel_ids: m.keys().copied().collect(),
                pc: m.values().map(|&p| p as f64 / 10.0).collect(),
            });
        prop::collection::vec(one, 0..=5)
    }

    fn frame_and_rois() -> impl Strategy<Value = (StixelFrame, Vec<RoiVotes>)> {
        (0u32..=20).prop_flat_map(|n| (Just(frame(n)), rois_strategy(n)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn matches_oracle((f, rois) in frame_and_rois()) {
            let order = confidence_order(&rois);
            let sorted: Vec<RoiVotes> = order.iter().map(|&i| rois[i].clone()).collect();
            let votes = collect_votes(&f, &sorted);
            let cfg = BpsConfig::default();
            prop_assert_eq!(select(0, &votes, &cfg), bps_oracle(0, &votes, &cfg));
        }

        #[test]
        fn total_and_idempotent((f, rois) in frame_and_rois()) {
            let cfg = BpsConfig::default();
            let a = bps(&f, &rois, &cfg);
            prop_assert!(a.labeling.check_covers(&f).is_ok());
            prop_assert_eq!(&a, &bps(&f, &rois, &cfg));
            // No empty instances.
            for id in a.scores.keys() {
                prop_assert!(a.labeling.labels.values().any(|x| x == id));
            }
        }

        #[test]
        fn raising_t_conf_never_adds((f, rois) in frame_and_rois(), lo in 0u32..10, step in 0u32..10) {
            let low = BpsConfig { t_conf: lo as f64 / 10.0, ..BpsConfig::default() };
            let high = BpsConfig { t_conf: (lo + step) as f64 / 10.0, ..BpsConfig::default() };
            let a = bps(&f, &rois, &low);
            let b = bps(&f, &rois, &high);
            for (sid, id) in &b.labeling.labels {
                if a.labeling.labels[sid].is_background() {
                    prop_assert!(id.is_background());
                }
            }
        }

        #[test]
        fn order_invariant_for_distinct_confidences((f, mut rois) in frame_and_rois(), seed in any::<u64>()) {
            for (i, r) in rois.iter_mut().enumerate() {
                r.c_bb = 0.1 + 0.15 * i as f64;
            }
            let cfg = BpsConfig::default();
            let a = bps(&f, &rois, &cfg).labeling.canonical();
            let mut shuffled = rois.clone();
            let k = shuffled.len().max(1);
            shuffled.rotate_left((seed as usize) % k);
            shuffled.reverse();
            prop_assert_eq!(a, bps(&f, &shuffled, &cfg).labeling.canonical());
        }
    }
}
