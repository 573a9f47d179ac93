//! The gated graph attention network over FDA graphs, with a plain GGNN
//! aggregation mode as the baseline.

mod forward;
mod lanes;

pub use forward::{
    aggregate_messages_ggnn, build_forward, edge_state_update, embed_nodes, forward_graph,
    gru_step, propagation_matrix, register_params, BatchValues, GraphOutput,
};
pub use lanes::{Dir, GraphBatch, LaneGroup};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::DiffError;
use crate::graph::EdgeType;

/// Aggregation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Dynamic edge states, learned propagation-matrix function, neighbor
    /// attention.
    Ggann,
    /// Static per-(type, direction) propagation matrices.
    Ggnn,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Ggann => "ggann",
            Mode::Ggnn => "ggnn",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ggann" => Ok(Mode::Ggann),
            "ggnn" => Ok(Mode::Ggnn),
            other => Err(format!("unknown mode '{other}' (expected ggann or ggnn)")),
        }
    }
}

/// Model hyperparameters. `desk` defaults keep laptop runs quick; the
/// full-scale dimension from the experiments (d = 270) is a config choice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    /// Propagation iterations.
    pub t: usize,
    pub num_classes: usize,
    pub num_kinds: usize,
    pub num_edge_types: usize,
    pub bidirectional: bool,
    pub mode: Mode,
    pub attention_hidden: usize,
    pub edge_state_hidden: usize,
}

impl ModelConfig {
    pub const DESK_D: usize = 32;
    pub const PAPER_D: usize = 270;
    pub const DEFAULT_T: usize = 5;

    pub fn desk(num_classes: usize) -> ModelConfig {
        ModelConfig {
            d: Self::DESK_D,
            t: Self::DEFAULT_T,
            num_classes,
            num_kinds: crate::frontend::NodeKind::COUNT,
            num_edge_types: EdgeType::COUNT,
            bidirectional: true,
            mode: Mode::Ggann,
            attention_hidden: Self::DESK_D,
            edge_state_hidden: Self::DESK_D,
        }
    }

    pub fn paper(num_classes: usize) -> ModelConfig {
        ModelConfig {
            d: Self::PAPER_D,
            attention_hidden: Self::PAPER_D,
            edge_state_hidden: Self::PAPER_D,
            ..Self::desk(num_classes)
        }
    }

    pub fn with_d(mut self, d: usize) -> ModelConfig {
        self.d = d;
        self.attention_hidden = d;
        self.edge_state_hidden = d;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d < 2 {
            return Err(ModelError::BadConfig(format!(
                "d must be >= 2, got {}",
                self.d
            )));
        }
        if self.t < 1 {
            return Err(ModelError::BadConfig(format!(
                "t must be >= 1, got {}",
                self.t
            )));
        }
        if self.num_classes < 2 {
            return Err(ModelError::BadConfig(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.num_edge_types != EdgeType::COUNT {
            return Err(ModelError::BadConfig(format!(
                "num_edge_types must be {}, got {}",
                EdgeType::COUNT,
                self.num_edge_types
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("node kind code {code} is outside the {num_kinds}-kind vocabulary")]
    UnknownKind { code: u16, num_kinds: usize },
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
}
