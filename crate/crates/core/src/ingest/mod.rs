//! On-disk formats: line-delimited JSON datasets, instance masks and binary
//! network checkpoints.

pub mod checkpoint;
pub mod dataset;
pub mod mask;

pub use checkpoint::{load_checkpoint, save_checkpoint, NetworkCheckpoint, TrainEcho};
pub use dataset::{
    load_dataset, load_labelings, load_manifest, load_masks, save_dataset, save_labelings, save_manifest, save_masks,
    save_predictions, Dataset, Manifest, MaskIndex, Sample, MASK_DIR,
};
pub use mask::{export_instance_mask, import_instance_mask, InstanceMask, MaskEncoding};
