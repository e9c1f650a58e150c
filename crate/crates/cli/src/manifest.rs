//! Run manifests written next to every output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    /// Every flag of the subcommand after defaults and the config overlay.
    pub config: serde_json::Value,
    /// SHA-256 of each input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    /// Anything the run computed that is worth keeping with its outputs.
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub results: serde_json::Value,
    /// Seconds since the Unix epoch; the only field that differs between
    /// identical runs.
    pub created_unix: u64,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: &impl Serialize) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config).expect("config serializes"),
            inputs: BTreeMap::new(),
            seed: None,
            results: serde_json::Value::Null,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let digest = Sha256::digest(&bytes);
        self.inputs.insert(path.display().to_string(), hex::encode(digest));
        Ok(())
    }

    pub fn inputs<'a>(&mut self, paths: impl IntoIterator<Item = &'a Path>) -> Result<(), CliError> {
        paths.into_iter().try_for_each(|p| self.input(p))
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

/// `out.jsonl` → `out.jsonl.manifest.json`.
pub fn beside(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Manifest location for commands whose output is a directory.
pub fn in_dir(dir: &Path, subcommand: &str) -> PathBuf {
    dir.join(format!("{subcommand}.manifest.json"))
}
