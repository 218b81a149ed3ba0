use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer widths of the segmentation network.
///
/// Every extractor layer and every head layer except the last is followed by
/// a ReLU. The head consumes the per-Stixel output of extractor stage `tap`
/// concatenated with the max-pooled global feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchitectureSpec {
    pub input_width: usize,
    pub extractor: Vec<usize>,
    pub head: Vec<usize>,
    pub tap: usize,
}

impl Default for ArchitectureSpec {
    fn default() -> Self {
        ArchitectureSpec {
            input_width: 10,
            extractor: vec![64, 64, 64, 128, 1024],
            head: vec![512, 256, 128, 2],
            tap: 1,
        }
    }
}

impl ArchitectureSpec {
    pub fn new(input_width: usize, extractor: Vec<usize>, head: Vec<usize>, tap: usize) -> Result<Self> {
        let spec = ArchitectureSpec {
            input_width,
            extractor,
            head,
            tap,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Parameter(format!("architecture: {m}")));
        if self.input_width == 0 {
            return err("input width must be positive");
        }
        if self.extractor.is_empty() || self.head.is_empty() {
            return err("extractor and head need at least one layer");
        }
        if self.extractor.iter().chain(&self.head).any(|&w| w == 0) {
            return err("layer widths must be positive");
        }
        if *self.head.last().unwrap() != 2 {
            return err("last head layer must have width 2");
        }
        if self.tap >= self.extractor.len() {
            return err("tap index out of range");
        }
        Ok(())
    }

    pub fn global_width(&self) -> usize {
        *self.extractor.last().expect("validated")
    }

    pub fn tap_width(&self) -> usize {
        self.extractor[self.tap]
    }

    /// `(fan_in, fan_out)` of every layer: extractor layers, then head layers.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut fan_in = self.input_width;
        for &w in &self.extractor {
            shapes.push((fan_in, w));
            fan_in = w;
        }
        fan_in = self.tap_width() + self.global_width();
        for &w in &self.head {
            shapes.push((fan_in, w));
            fan_in = w;
        }
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}
