//! Optimization: cross-entropy with L2, Adam, linear learning-rate decay,
//! batching, validation-based early stopping.

mod adam;
mod fit;

pub use adam::{adam_step, AdamState};
pub use fit::{evaluate, fit, FitResult};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{DiffError, Tape, Value};
use crate::model::ModelError;

/// Training hyperparameters. Desk defaults train a small corpus in minutes;
/// `paper()` switches to the full-scale settings (3000 epochs, batch 10000).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Batch size in graphs.
    pub batch_graphs: usize,
    /// Optional node-budget batching: when set, batches are filled until the
    /// node count passes this budget instead of counting graphs.
    pub batch_nodes: Option<usize>,
    /// Initial learning rate `l`.
    pub lr_initial: f64,
    /// Attenuation coefficient `F` in [0, 1]; the last epoch runs at `l * F`.
    pub decay_f: f64,
    /// L2 coefficient over weight matrices (biases and embeddings excluded).
    pub l2_lambda: f64,
    /// Include the embedding table in the L2 term.
    pub l2_all: bool,
    pub dropout_rho: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Evaluations without validation improvement before stopping.
    pub early_stop_patience: usize,
    pub seed: u64,
    /// Worker threads; 1 means serial mode (bit-reproducible, timing
    /// suppressed in metrics).
    pub threads: usize,
}

impl TrainConfig {
    pub fn desk() -> TrainConfig {
        TrainConfig {
            epochs: 100,
            batch_graphs: 32,
            batch_nodes: None,
            lr_initial: 1e-4,
            decay_f: 0.1,
            l2_lambda: 0.0005,
            l2_all: false,
            dropout_rho: 0.6,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            early_stop_patience: 10,
            seed: 42,
            threads: 1,
        }
    }

    pub fn paper() -> TrainConfig {
        TrainConfig {
            epochs: 3000,
            batch_graphs: 10000,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..=1.0).contains(&self.decay_f) {
            return Err(TrainError::BadConfig(format!(
                "decay_f must be in [0, 1], got {}",
                self.decay_f
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rho) {
            return Err(TrainError::BadConfig(format!(
                "dropout_rho must be in [0, 1), got {}",
                self.dropout_rho
            )));
        }
        if self.l2_lambda < 0.0 {
            return Err(TrainError::BadConfig(format!(
                "l2_lambda must be >= 0, got {}",
                self.l2_lambda
            )));
        }
        if self.epochs == 0 || self.batch_graphs == 0 {
            return Err(TrainError::BadConfig(
                "epochs and batch_graphs must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// One evaluation record.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    /// Accuracy per class id; NaN-free (classes absent from the split get 0
    /// with a 0 weight).
    pub per_class: Vec<f64>,
    pub seconds: f64,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("split '{0}' is empty")]
    EmptySplit(&'static str),
    #[error("graph '{source_id}' has label {label}, outside {num_classes} classes")]
    LabelOutOfRange {
        source_id: String,
        label: usize,
        num_classes: usize,
    },
    #[error("graph '{source_id}' has no label")]
    MissingLabel { source_id: String },
    #[error("invalid train config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<DiffError> for TrainError {
    fn from(e: DiffError) -> Self {
        TrainError::Model(ModelError::Diff(e))
    }
}

/// Linear learning-rate decay from `l` at epoch 0 to `l * f` at the last
/// epoch; constant when there is a single epoch.
pub fn lr_at(epoch: usize, epochs: usize, l: f64, f: f64) -> f64 {
    assert!(epoch < epochs, "epoch {epoch} out of range {epochs}");
    if epochs == 1 {
        return l;
    }
    l * (1.0 - (1.0 - f) * epoch as f64 / (epochs - 1) as f64)
}

/// True when the parameter takes part in the L2 term: weight matrices only,
/// with the embedding table excluded unless `l2_all` is set.
pub fn decays(name: &str, shape: &[usize], l2_all: bool) -> bool {
    shape.len() == 2 && (l2_all || name != "embed.kind")
}

/// Cross-entropy of one predicted distribution plus the L2 penalty over the
/// bound weight matrices: `-log p[true] + lambda * sum ||W||^2`.
pub fn loss(
    tape: &mut Tape,
    probs: Value,
    true_class: usize,
    bound: &BTreeMap<String, Value>,
    lambda: f64,
    l2_all: bool,
) -> Result<Value, DiffError> {
    let picked = tape.pick_per_row(probs, std::sync::Arc::new(vec![true_class]))?;
    let lp = tape.ln(picked);
    let neg = tape.scale(lp, -1.0);
    let mut total = tape.sum_all(neg);
    if lambda > 0.0 {
        for (name, &v) in bound {
            if decays(name, tape.value(v).shape(), l2_all) {
                let sq = tape.mul(v, v)?;
                let s = tape.sum_all(sq);
                let s = tape.scale(s, lambda);
                total = tape.add(total, s)?;
            }
        }
    }
    Ok(total)
}
