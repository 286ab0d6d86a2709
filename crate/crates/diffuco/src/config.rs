//! Training configuration files: flat JSON objects whose keys are exactly
//! the fields of [`TrainConfig`].

use std::fs;
use std::path::Path;

use diffuco_core::training::TrainConfig;

use crate::error::{Error, Result};

/// Parses and validates a configuration. Unknown or missing keys are
/// reported with their line number.
pub fn parse_config(text: &str, path: &Path) -> Result<TrainConfig> {
    let config: TrainConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    config.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path)
}

/// Pretty JSON form of a configuration, loadable by [`load_config`].
pub fn config_to_json(config: &TrainConfig) -> String {
    serde_json::to_string_pretty(config).expect("configurations always serialise")
}
