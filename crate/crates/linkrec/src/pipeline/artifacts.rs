//! Versioned artifact persistence and per-stage manifests.
//!
//! Stage outputs land under `<output_dir>/<stage>/<config-hash>/`, so
//! different configurations never collide and stages re-run independently.
//! Manifests contain only deterministic content; wall-clock timings go to a
//! separate `timings.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Format version stamped into every versioned artifact file.
pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct VersionedFile<T> {
    version: u32,
    kind: String,
    data: T,
}

/// Write a versioned JSON artifact.
pub fn save_versioned<T: Serialize>(path: &Path, kind: &str, data: &T) -> Result<()> {
    let file = VersionedFile {
        version: ARTIFACT_FORMAT_VERSION,
        kind: kind.to_string(),
        data,
    };
    write_bytes(path, serde_json::to_vec_pretty(&file)?)
}

/// Load a versioned JSON artifact, checking its kind and version.
pub fn load_versioned<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let file: VersionedFile<T> = serde_json::from_slice(&bytes)?;
    if file.kind != kind {
        return Err(Error::Config(format!(
            "{}: expected artifact kind {kind:?}, found {:?}",
            path.display(),
            file.kind
        )));
    }
    if file.version != ARTIFACT_FORMAT_VERSION {
        return Err(Error::Config(format!(
            "{}: artifact format version {} unsupported (tool expects {})",
            path.display(),
            file.version,
            ARTIFACT_FORMAT_VERSION
        )));
    }
    Ok(file.data)
}

/// Write one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    write_bytes(path, out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, data: &T) -> Result<()> {
    write_bytes(path, serde_json::to_vec_pretty(data)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(Error::from)
}

fn write_bytes(path: &Path, bytes: Vec<u8>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Deterministic record of one stage run: what was produced and how much,
/// keyed by the configuration fingerprint. Never contains credentials or
/// wall-clock data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub fingerprint: String,
    pub tool_version: String,
    /// Artifact paths relative to the stage directory, sorted.
    pub artifacts: Vec<String>,
    pub counts: BTreeMap<String, u64>,
}

impl RunManifest {
    pub fn new(stage: &str, fingerprint: &str) -> Self {
        RunManifest {
            stage: stage.to_string(),
            fingerprint: fingerprint.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            artifacts: Vec::new(),
            counts: BTreeMap::new(),
        }
    }

    pub fn artifact(&mut self, relative: impl Into<String>) {
        self.artifacts.push(relative.into());
    }

    pub fn count(&mut self, key: &str, value: u64) {
        *self.counts.entry(key.to_string()).or_insert(0) += value;
    }

    pub fn write(mut self, stage_dir: &Path) -> Result<()> {
        self.artifacts.sort();
        write_json(&stage_dir.join("manifest.json"), &self)
    }
}

/// Wall-clock step timings; diagnostic only and excluded from determinism
/// guarantees.
#[derive(Debug, Default, Serialize)]
pub struct StageTimings {
    pub steps: BTreeMap<String, u128>,
}

impl StageTimings {
    pub fn record(&mut self, step: &str, elapsed: std::time::Duration) {
        self.steps.insert(step.to_string(), elapsed.as_millis());
    }

    pub fn write(&self, stage_dir: &Path) -> Result<()> {
        write_json(&stage_dir.join("timings.json"), self)
    }
}

/// Path of one stage's artifact root for a config fingerprint.
pub fn stage_dir(output_dir: &Path, stage: &str, fingerprint_short: &str) -> PathBuf {
    output_dir.join(stage).join(fingerprint_short)
}

/// Fail fast with the missing artifact path when a prerequisite stage has
/// not run.
pub fn require_artifact(path: &Path, produced_by: &'static str) -> Result<()> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf(), produced_by));
    }
    Ok(())
}
