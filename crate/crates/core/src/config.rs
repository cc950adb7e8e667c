//! Resolved configuration for every command: one section per component.

use serde::{Deserialize, Serialize};

use crate::harness::StudyConfig;
use crate::model::TrainConfig;
use crate::sim::TrialConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Settings {
    /// Master seed for data generation, training and studies.
    pub seed: u64,
    #[serde(flatten)]
    pub trial: TrialConfig,
    pub train: TrainConfig,
    pub study: StudyConfig,
}
