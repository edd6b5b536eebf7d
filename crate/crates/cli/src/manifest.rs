use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::fail::{Fail, ResultExt, EXIT_STAGE};

/// Self-description of an output directory, rewritten as stages finish.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub config: String,
    pub seed: u64,
    /// Named random streams and their stream ids.
    pub streams: BTreeMap<String, u64>,
    pub versions: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub timings_ms: BTreeMap<String, u128>,
    pub status: String,
    pub failed_stage: Option<String>,
}

pub struct ManifestWriter {
    path: PathBuf,
    pub manifest: RunManifest,
    started: Instant,
}

impl ManifestWriter {
    /// Creates the manifest and writes it immediately.
    pub fn create(
        dir: &Path,
        command: &str,
        config_text: String,
        config_hash: String,
        seed: u64,
    ) -> Result<Self, Fail> {
        let mut versions = BTreeMap::new();
        versions.insert(
            "tastr-cli".to_string(),
            env!("CARGO_PKG_VERSION").to_string(),
        );
        versions.insert("tastr-core".to_string(), tastr_core::VERSION.to_string());
        let w = Self {
            path: dir.join("manifest.json"),
            manifest: RunManifest {
                command: command.to_string(),
                config_hash,
                config: config_text,
                seed,
                streams: BTreeMap::new(),
                versions,
                outputs: Vec::new(),
                timings_ms: BTreeMap::new(),
                status: "running".into(),
                failed_stage: None,
            },
            started: Instant::now(),
        };
        w.write()?;
        Ok(w)
    }

    pub fn write(&self) -> Result<(), Fail> {
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(&self.path, text + "\n").with_code(EXIT_STAGE, || {
            format!("cannot write {}", self.path.display())
        })
    }

    pub fn output(&mut self, name: impl Into<String>) {
        let name = name.into();
        if !self.manifest.outputs.contains(&name) {
            self.manifest.outputs.push(name);
        }
    }

    pub fn time(&mut self, stage: &str, since: Instant) {
        self.manifest
            .timings_ms
            .insert(stage.to_string(), since.elapsed().as_millis());
    }

    pub fn finish(&mut self, result: &Result<(), Fail>, stage: Option<String>) -> Result<(), Fail> {
        self.manifest
            .timings_ms
            .insert("total".into(), self.started.elapsed().as_millis());
        match result {
            Ok(()) => self.manifest.status = "ok".into(),
            Err(e) => {
                self.manifest.status = format!("failed: {e}");
                self.manifest.failed_stage = stage;
            }
        }
        self.write()
    }
}
