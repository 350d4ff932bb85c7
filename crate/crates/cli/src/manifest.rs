use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use prefixsql_core::digest::file_digest;
use serde::{Deserialize, Serialize};

/// Provenance record written beside every output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub input_digests: BTreeMap<String, String>,
    pub output_digests: BTreeMap<String, String>,
    pub tool_version: String,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            input_digests: BTreeMap::new(),
            output_digests: BTreeMap::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    pub fn input(mut self, path: &Path) -> Result<Self> {
        let digest = file_digest(path).with_context(|| format!("cannot read {}", path.display()))?;
        self.input_digests.insert(path.display().to_string(), digest);
        Ok(self)
    }

    /// Records `path` under its file name.
    pub fn output(&mut self, path: &Path) -> Result<()> {
        let digest = file_digest(path).with_context(|| format!("cannot read {}", path.display()))?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        self.output_digests.insert(name, digest);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
    }
}

/// `out.json` gets `out.json.manifest.json`.
pub fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}
