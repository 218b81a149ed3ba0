//! Experiment configuration file. Every section is optional; command-line
//! flags override the values read here.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use stxpn::baselines::HacConfig;
use stxpn::bps::BpsConfig;
use stxpn::filter::FilterParams;
use stxpn::pointnet::{ArchitectureSpec, TrainConfig};
use stxpn::synth::{DetectorNoise, SceneConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub train_data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub paths: Paths,
    pub scene: SceneConfig,
    pub detector: DetectorNoise,
    pub filter: FilterParams,
    pub bps: BpsConfig,
    pub train: TrainConfig,
    pub arch: ArchitectureSpec,
    pub hac: HacConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            paths: Paths::default(),
            scene: SceneConfig::default(),
            detector: DetectorNoise::default(),
            filter: FilterParams::default(),
            bps: BpsConfig::default(),
            train: TrainConfig::default(),
            arch: ArchitectureSpec::default(),
            hac: HacConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
