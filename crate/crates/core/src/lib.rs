//! Instance segmentation on Semantic Stixels.
//!
//! Detection boxes select candidate Stixels, a small point network predicts
//! which of them belong to the boxed object, and best-prediction selection
//! fuses the per-box answers into one instance labeling per frame. The crate
//! also contains ground-truth generation from pixel masks, non-learned
//! baselines, AP evaluation, a synthetic scene generator and a runtime
//! benchmark.

pub mod baselines;
pub mod bps;
pub mod error;
pub mod exec;
pub mod eval;
pub mod filter;
pub mod gtgen;
pub mod geometry;
pub mod infer;
pub mod ingest;
pub mod pointnet;
pub mod render;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use exec::Execution;
pub use geometry::Rect;
pub use types::{ClassId, ClassTable, DetectionBox, InstanceId, InstanceLabeling, PredictedLabeling, Stixel, StixelFrame};
