//! Run manifests and config-file merging.

use super::CliError;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::path::Path;

/// A subcommand with its fully resolved parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invocation {
    pub subcommand: String,
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDigest {
    /// `stdout`, `output`, `log` or `detail`.
    pub role: String,
    pub path: Option<String>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub params: Value,
    pub seed: Option<u64>,
    pub version: String,
    pub outputs: Vec<OutputDigest>,
}

impl RunManifest {
    pub fn invocation(&self) -> Invocation {
        Invocation {
            subcommand: self.subcommand.clone(),
            params: self.params.clone(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Overlays a JSON config file on parsed flags. Keys absent from the flags
/// are taken from the file; a key set in both with different values is an
/// error.
pub fn merge_config<T: Serialize + DeserializeOwned>(
    flags: &T,
    config: Option<&Path>,
) -> Result<T, CliError> {
    let mut merged = serde_json::to_value(flags).map_err(CliError::internal)?;
    if let Some(path) = config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let file: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))?;
        let Value::Object(file) = file else {
            return Err(CliError::usage(format!(
                "config {} must be a JSON object",
                path.display()
            )));
        };
        let target = merged
            .as_object_mut()
            .expect("argument structs serialize to objects");
        for (key, value) in file {
            match target.get(&key) {
                Some(flag) if !flag.is_null() && *flag != value => {
                    return Err(CliError::usage(format!(
                        "flag `{key}` = {flag} conflicts with config value {value}"
                    )));
                }
                _ => {
                    target.insert(key, value);
                }
            }
        }
    }
    serde_json::from_value(merged).map_err(|e| CliError::usage(format!("invalid parameters: {e}")))
}
