//! Run configuration, readable from TOML. Every section and key is optional.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annindex::{Backend, IndexParams};
use crate::contextmask::{MaskParams, VerdictThresholds};
use crate::error::{Error, Result};
use crate::features::{DetectorConfig, LARGE_SCALE_BUDGET};
use crate::geometry::RansacParams;
use crate::retrieval::VoteParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budgets {
    /// Keypoints per gallery image when indexing.
    pub index: usize,
    /// Keypoints extracted from a query.
    pub query: usize,
    /// Keypoints when re-detecting inside a mask component.
    pub region: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            index: LARGE_SCALE_BUDGET,
            query: LARGE_SCALE_BUDGET,
            region: LARGE_SCALE_BUDGET,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexConfig {
    pub backend: Backend,
    #[serde(flatten)]
    pub params: IndexParams,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            backend: Backend::KdForest,
            params: IndexParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryConfig {
    pub ratio_threshold: f32,
    pub top_matches: usize,
    #[serde(flatten)]
    pub ransac: RansacParams,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            ratio_threshold: 0.8,
            top_matches: 25,
            ransac: RansacParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Mask components queried in tier 2, largest first.
    pub max_components: usize,
    /// Below this many keypoints inside a component, re-detect in its box.
    pub min_kp: usize,
    /// Refinement passes.
    pub iterations: usize,
    /// When false, every query stops after tier 1.
    pub second_tier: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_components: 4,
            min_kp: 10,
            iterations: 1,
            second_tier: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Config {
    pub seed: u64,
    pub detector: DetectorConfig,
    pub budgets: Budgets,
    pub index: IndexConfig,
    pub vote: VoteParams,
    pub geometry: GeometryConfig,
    pub mask: MaskParams,
    pub verdict: VerdictThresholds,
    pub pipeline: PipelineConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidParams(format!("config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
