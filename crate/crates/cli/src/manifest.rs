use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::matrix::MatrixSpec;
use crate::CliError;

pub const ARTIFACT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

/// Written next to every output. Feeding it back to the command that wrote
/// it reproduces the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub artifact_version: u32,
    pub tool_version: String,
    pub command: String,
    pub seeds: Vec<u64>,
    /// Hash of `config` (run) or of the resolved matrix JSON (sweep).
    pub config_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixSpec>,
    pub outputs: Vec<OutputFile>,
}

impl Manifest {
    pub fn new(command: &str, seeds: Vec<u64>, config_sha256: String) -> Self {
        Self {
            artifact_version: ARTIFACT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seeds,
            config_sha256,
            config: None,
            matrix: None,
            outputs: Vec::new(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self, CliError> {
        let m: Manifest =
            serde_json::from_str(s).map_err(|e| CliError::Validation(format!("cannot parse manifest: {e}")))?;
        if m.artifact_version != ARTIFACT_VERSION {
            return Err(CliError::Validation(format!(
                "manifest artifact_version {} is not supported",
                m.artifact_version
            )));
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

pub fn write(path: &Path, contents: &str) -> Result<OutputFile, CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))?;
    Ok(OutputFile {
        path: path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        sha256: sha256_hex(contents.as_bytes()),
    })
}
