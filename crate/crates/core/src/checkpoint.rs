//! Checkpoint serialization: versioned JSON with config and parameters.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::diff::{ParamStore, Tensor};
use crate::model::register_params;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorDto {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDto {
    version: u32,
    config: RunConfig,
    params: BTreeMap<String, TensorDto>,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("unsupported checkpoint version {0}")]
    UnknownVersion(u32),
    #[error("parameter '{name}' has shape {got:?}, config expects {expected:?}")]
    ShapeMismatch {
        name: String,
        got: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("checkpoint parameters do not match the config: {0}")]
    ParamSetMismatch(String),
}

pub fn checkpoint_to_json(config: &RunConfig, params: &ParamStore) -> String {
    let dto = CheckpointDto {
        version: CHECKPOINT_VERSION,
        config: config.clone(),
        params: params
            .iter()
            .map(|(name, t)| {
                (
                    name.clone(),
                    TensorDto {
                        shape: t.shape().to_vec(),
                        data: t.data().to_vec(),
                    },
                )
            })
            .collect(),
    };
    serde_json::to_string(&dto).expect("checkpoint serialization cannot fail")
}

/// Writes the checkpoint atomically: a temp file in the same directory is
/// renamed over the target.
pub fn save_checkpoint(
    path: &Path,
    config: &RunConfig,
    params: &ParamStore,
) -> Result<(), CheckpointError> {
    let json = checkpoint_to_json(config, params);
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(json.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Parses a checkpoint, rejecting unknown versions and any parameter set or
/// shape that disagrees with what the stored config would register.
pub fn checkpoint_from_json(json: &str) -> Result<(RunConfig, ParamStore), CheckpointError> {
    let dto: CheckpointDto =
        serde_json::from_str(json).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    if dto.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnknownVersion(dto.version));
    }
    let expected = register_params(&dto.config.model, 0)
        .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    if expected.len() != dto.params.len() {
        return Err(CheckpointError::ParamSetMismatch(format!(
            "{} stored, {} expected",
            dto.params.len(),
            expected.len()
        )));
    }
    let mut params = ParamStore::new();
    for (name, t) in dto.params {
        if !expected.contains(&name) {
            return Err(CheckpointError::ParamSetMismatch(format!(
                "unexpected parameter '{name}'"
            )));
        }
        let want = expected.get(&name).shape();
        if want != t.shape {
            return Err(CheckpointError::ShapeMismatch {
                name,
                got: t.shape,
                expected: want.to_vec(),
            });
        }
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(CheckpointError::Malformed(format!(
                "parameter '{name}' data length does not match its shape"
            )));
        }
        params.insert(name, Tensor::new(t.shape, t.data));
    }
    Ok((dto.config, params))
}

pub fn load_checkpoint(path: &Path) -> Result<(RunConfig, ParamStore), CheckpointError> {
    let json = fs::read_to_string(path)?;
    checkpoint_from_json(&json)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::train::TrainConfig;

    fn small_run() -> (RunConfig, ParamStore) {
        let mut model = ModelConfig::desk(2).with_d(4);
        model.t = 1;
        let config = RunConfig {
            model: model.clone(),
            train: TrainConfig::desk(),
        };
        let params = register_params(&model, 7).unwrap();
        (config, params)
    }

    #[test]
    fn round_trip() {
        let (config, params) = small_run();
        let json = checkpoint_to_json(&config, &params);
        let (c2, p2) = checkpoint_from_json(&json).unwrap();
        assert_eq!(c2, config);
        assert_eq!(p2, params);
        assert_eq!(checkpoint_to_json(&c2, &p2), json);
    }

    #[test]
    fn rejects_unknown_version() {
        let (config, params) = small_run();
        let json = checkpoint_to_json(&config, &params).replace("\"version\":1", "\"version\":9");
        assert!(matches!(
            checkpoint_from_json(&json),
            Err(CheckpointError::UnknownVersion(9))
        ));
    }

    #[test]
    fn rejects_shape_mismatch() {
        let (config, params) = small_run();
        let mut json = checkpoint_to_json(&config, &params);
        // shrink d in the stored config so every shape disagrees
        json = json.replace("\"d\":4", "\"d\":6");
        let err = checkpoint_from_json(&json).unwrap_err();
        assert!(
            matches!(err, CheckpointError::ShapeMismatch { .. }),
            "{err:?}"
        );
    }

    #[test]
    fn atomic_save_and_load() {
        let (config, params) = small_run();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&path, &config, &params).unwrap();
        let (c2, p2) = load_checkpoint(&path).unwrap();
        assert_eq!(c2, config);
        assert_eq!(p2, params);
        assert!(!path.with_extension("json.tmp").exists());
    }
}
