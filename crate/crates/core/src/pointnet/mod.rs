//! Binary segmentation network over the Stixels of one RoI: shared
//! per-Stixel MLP, max-pooled global feature, and a segmentation head fed
//! with the concatenation of a per-Stixel feature and the global feature.

mod adam;
mod arch;
mod model;
mod targets;
mod train;

pub use adam::{adam_step, adam_update, AdamConfig, AdamState};
pub use arch::ArchitectureSpec;
pub use model::{
    cross_entropy, loss_gradient, object_probability, softmax, Batch, Dense, ForwardCache, ModelState, Network,
};
pub use targets::{sample_targets, target_assignment, TargetAssignment};
pub use train::{
    batch_gradient, loss_log_csv, standardization, train, train_examples, training_examples, EpochLog, LrDecay,
    TrainConfig, Trainer, TrainingExample,
};

use crate::error::Result;
use crate::filter::RoiSample;

/// Per-Stixel "object" probabilities of one RoI plus the 0.5 decision.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiPrediction {
    pub pc: Vec<f64>,
    pub positive: Vec<bool>,
}

impl RoiPrediction {
    pub fn from_probabilities(pc: Vec<f64>) -> Self {
        let positive = pc.iter().map(|&p| p > 0.5).collect();
        RoiPrediction { pc, positive }
    }

    pub fn from_binary(labels: &[bool]) -> Self {
        RoiPrediction {
            pc: labels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            positive: labels.to_vec(),
        }
    }
}

/// Forward pass over one sample.
pub fn forward(state: &ModelState, sample: &RoiSample) -> Result<(ndarray::Array2<f64>, RoiPrediction)> {
    let logits = state.logits(&Batch::single(sample.features.view())?)?;
    let pc = object_probability(&logits);
    Ok((logits, RoiPrediction::from_probabilities(pc)))
}
