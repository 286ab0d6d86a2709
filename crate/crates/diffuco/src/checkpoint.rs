//! Versioned JSON checkpoints of model parameters.
//!
//! Values are written with shortest round-trip formatting, so loading a
//! checkpoint reproduces the parameters bit for bit.

use std::fs;
use std::path::Path;

use diffuco_core::gnn::{ModelConfig, ModelParams, TensorSpec};
use diffuco_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FORMAT: &str = "diffuco-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct File {
    format: String,
    version: u32,
    model: ModelConfig,
    #[serde(default)]
    training: Option<TrainConfig>,
    /// Number of optimizer steps taken when the file was written.
    #[serde(default)]
    step: usize,
    tensors: Vec<Tensor>,
    values: Vec<f64>,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Tensor {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

impl From<TensorSpec> for Tensor {
    fn from(t: TensorSpec) -> Self {
        Self {
            name: t.name,
            shape: t.shape,
            offset: t.offset,
        }
    }
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub training: Option<TrainConfig>,
    pub step: usize,
}

/// Writes `params` (and optionally the configuration that produced them).
pub fn save(path: &Path, params: &ModelParams, training: Option<&TrainConfig>, step: usize) -> Result<()> {
    let file = File {
        format: FORMAT.into(),
        version: VERSION,
        model: *params.config(),
        training: training.cloned(),
        step,
        tensors: params.manifest().into_iter().map(Tensor::from).collect(),
        values: params.values().to_vec(),
    };
    let text = serde_json::to_string(&file).expect("checkpoints always serialise");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint, checking the format tag, version and that the shape
/// manifest matches the architecture it declares.
pub fn load(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: File = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if file.format != FORMAT {
        return Err(Error::format(
            path,
            format!("not a checkpoint (format tag {:?})", file.format),
        ));
    }
    if file.version != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint version {}", file.version),
        ));
    }
    let params = ModelParams::from_values(file.model, file.values).map_err(|e| Error::format(path, e.to_string()))?;
    let expected: Vec<Tensor> = params.manifest().into_iter().map(Tensor::from).collect();
    if expected != file.tensors {
        return Err(Error::format(
            path,
            "tensor manifest does not match the model configuration",
        ));
    }
    if let Some(t) = &file.training {
        if t.model_config() != file.model {
            return Err(Error::format(path, "training configuration does not match the model"));
        }
    }
    Ok(Checkpoint {
        params,
        training: file.training,
        step: file.step,
    })
}
