//! Versioned JSON model files.
//!
//! Serialization order is fixed by the type definitions and every float is
//! written with 17 significant digits, so save, load and save again yields
//! identical bytes.

use std::path::Path;

use dynmed_core::causal::RegimeModels;
use serde::{Deserialize, Serialize};

use crate::dataset::write_file;
use crate::error::{Result, WorkbenchError};
use crate::format::to_json;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u64,
    /// Patients the models were fitted on; rollouts use their baselines.
    pub patients: Vec<String>,
    pub models: RegimeModels,
}

impl ModelFile {
    pub fn new(patients: Vec<String>, models: RegimeModels) -> Self {
        ModelFile { format_version: FORMAT_VERSION, patients, models }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        to_json(self)
    }

    /// Parses a model file, checking the version tag before anything else.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| WorkbenchError::format("<model>", e))?;
        match value.get("format_version") {
            Some(serde_json::Value::Number(n)) if n.as_u64() == Some(FORMAT_VERSION) => {}
            Some(v) => return Err(WorkbenchError::Version { found: v.to_string(), expected: FORMAT_VERSION }),
            None => return Err(WorkbenchError::format("<model>", "missing format_version")),
        }
        serde_json::from_value(value).map_err(|e| WorkbenchError::format("<model>", e))
    }
}

pub fn save_model(file: &ModelFile, path: &Path) -> Result<()> {
    let text = file.to_json().map_err(|e| WorkbenchError::format(path, e))?;
    write_file(path, text.as_bytes())
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path).map_err(|e| WorkbenchError::io(path, e))?;
    ModelFile::from_json(&text).map_err(|e| match e {
        WorkbenchError::Format { message, .. } => WorkbenchError::format(path, message),
        other => other,
    })
}
