//! Provenance header embedded in every artifact the tool writes.

use serde::{Deserialize, Serialize};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_path: Option<String>,
    #[serde(default)]
    pub inputs: Vec<String>,
    pub output_dir: String,
    pub seed: u64,
    pub tool_version: String,
}

impl RunManifest {
    pub fn new(command: &str, output_dir: impl Into<String>, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            config_path: None,
            inputs: Vec::new(),
            output_dir: output_dir.into(),
            seed,
            tool_version: TOOL_VERSION.to_string(),
        }
    }

    pub fn with_inputs(mut self, inputs: impl IntoIterator<Item = String>) -> Self {
        self.inputs = inputs.into_iter().collect();
        self
    }

    pub fn with_config(mut self, path: Option<String>) -> Self {
        self.config_path = path;
        self
    }

    /// Single-line JSON, suitable for `#` comments in CSV and PGM headers.
    pub fn header_line(&self) -> String {
        format!("run {}", serde_json::to_string(self).expect("manifest serializes"))
    }
}
