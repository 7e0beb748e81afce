//! Experiment configuration: defaults, an optional JSON file and `key=value`
//! overrides, in that order.

use std::path::Path;

use rbm_core::io::{read_json_lenient, write_json_document, CONFIG_MAGIC};
use rbm_core::{Error, ExperimentConfig, Result};
use serde_json::Value;

pub const SNAPSHOT: &str = "resolved_config.json";

fn config_error(e: serde_json::Error) -> Error {
    Error::Config(e.to_string())
}

/// Sets a dotted key on a JSON tree. Every segment must already exist, so
/// misspelled keys are rejected instead of silently ignored.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| {
        Error::Config(format!(
            "override `{assignment}` is not of the form key=value"
        ))
    })?;
    let mut node = &mut *root;
    for part in key.split('.') {
        node = node
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| Error::Config(format!("unknown configuration key `{key}`")))?;
    }
    *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let base = match file {
        Some(p) => read_json_lenient::<Value>(p, CONFIG_MAGIC)
            .and_then(|v| serde_json::from_value::<ExperimentConfig>(v).map_err(config_error))?,
        None => ExperimentConfig::default(),
    };
    let mut tree = serde_json::to_value(&base)?;
    for o in overrides {
        apply_override(&mut tree, o)?;
    }
    serde_json::from_value::<ExperimentConfig>(tree)
        .map_err(config_error)?
        .resolve()
}

pub fn write_snapshot(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    write_json_document(dir.join(SNAPSHOT), CONFIG_MAGIC, cfg)
}
