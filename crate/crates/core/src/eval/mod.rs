//! Stixel-level and mask-level average precision and the runtime benchmark.

pub mod ap;
pub mod bench;
pub mod iou;

pub use ap::{
    all_point_ap, average_precision, evaluate, evaluated_classes, iou_thresholds, mask_average_precision,
    mask_frame_eval, match_instances, stixel_frame_eval, ApReport, ClassAp, EvalInstance, FrameEval, MatchCounts,
    Matching,
};
pub use iou::{instance_iou, mask_overlaps, mask_regions, MaskRegion};
pub use bench::{run_benchmark, standard_workloads, synthesize_workload, BenchInput, BenchReport, ComponentTime, Workload};
