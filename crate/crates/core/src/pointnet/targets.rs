use std::collections::BTreeMap;

use crate::filter::RoiSample;
use crate::types::{ClassTable, InstanceId, InstanceLabeling};

/// Binary training targets of one RoI and the ground-truth instance they
/// refer to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetAssignment {
    pub targets: Vec<u8>,
    pub instance: Option<InstanceId>,
}

impl TargetAssignment {
    pub fn positives(&self) -> usize {
        self.targets.iter().filter(|&&t| t == 1).count()
    }
}

/// Associate the RoI with the same-class ground-truth instance that owns the
/// most captured Stixels (ties to the smaller id) and mark its Stixels.
/// Classes are compared after merging.
pub fn target_assignment(
    box_label: usize,
    captured: &[u32],
    gt: &InstanceLabeling,
    classes: &ClassTable,
) -> TargetAssignment {
    let want = classes.merged(box_label);
    let mut counts: BTreeMap<InstanceId, usize> = BTreeMap::new();
    for &sid in captured {
        let inst = gt.get(sid);
        if let Some(class) = inst.class() {
            if classes.merged(class) == want {
                *counts.entry(inst).or_insert(0) += 1;
            }
        }
    }
    let mut best: Option<(InstanceId, usize)> = None;
    for (inst, n) in counts {
        if best.is_none_or(|(_, b)| n > b) {
            best = Some((inst, n));
        }
    }
    let instance = best.map(|(i, _)| i);
    let targets = captured
        .iter()
        .map(|&sid| u8::from(Some(gt.get(sid)) == instance))
        .collect();
    TargetAssignment { targets, instance }
}

pub fn sample_targets(sample: &RoiSample, gt: &InstanceLabeling, classes: &ClassTable) -> TargetAssignment {
    target_assignment(sample.roi.box_label(), &sample.stixel_ids, gt, classes)
}
