//! Combined run configuration.

use serde::{Deserialize, Serialize};

use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// Model plus training hyperparameters, as stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn desk(num_classes: usize) -> RunConfig {
        RunConfig {
            model: ModelConfig::desk(num_classes),
            train: TrainConfig::desk(),
        }
    }

    pub fn paper(num_classes: usize) -> RunConfig {
        RunConfig {
            model: ModelConfig::paper(num_classes),
            train: TrainConfig::paper(),
        }
    }
}
