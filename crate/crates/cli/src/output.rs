//! Writes a run's artifacts, its JSON summary and the manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::run::{Artifact, RunError, RunOutput};

#[derive(Debug, Serialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub kind: String,
    pub description: String,
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    pub wall_time_seconds: f64,
    pub workers: usize,
    pub artifacts: Vec<ManifestEntry>,
}

fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write(dir: &Path, a: &Artifact) -> Result<ManifestEntry, RunError> {
    let path = dir.join(&a.name);
    fs::write(&path, &a.bytes).map_err(|e| RunError::Output(format!("cannot write {}: {e}", path.display())))?;
    Ok(ManifestEntry {
        file: a.name.clone(),
        sha256: sha256(&a.bytes),
        bytes: a.bytes.len(),
    })
}

/// Checks up front that `dir` can be created and written, so a bad output
/// path fails before any solve.
pub fn prepare_dir(dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(|e| RunError::Output(format!("output_dir {}: {e}", dir.display())))?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"")
        .map_err(|e| RunError::Output(format!("output_dir {} is not writable: {e}", dir.display())))?;
    let _ = fs::remove_file(probe);
    Ok(())
}

/// Writes every artifact plus `summary.json`, then `manifest.json` listing
/// all of them with content hashes. Returns the manifest path.
pub fn write_run(
    dir: &Path,
    config: &ExperimentConfig,
    out: RunOutput,
    wall: Duration,
    workers: usize,
) -> Result<PathBuf, RunError> {
    prepare_dir(dir)?;
    let mut summary = serde_json::Map::new();
    summary.insert("kind".into(), config.experiment.kind().into());
    summary.insert("description".into(), config.common.description.clone().into());
    summary.extend(out.summary);
    let mut json = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    json.push(b'\n');
    let mut artifacts = out.artifacts;
    artifacts.push(Artifact {
        name: "summary.json".into(),
        bytes: json,
    });
    let entries = artifacts.iter().map(|a| write(dir, a)).collect::<Result<Vec<_>, _>>()?;
    let manifest = Manifest {
        kind: config.experiment.kind().into(),
        description: config.common.description.clone(),
        config_sha256: sha256(config.raw.as_bytes()),
        seed: config.common.seed,
        version: env!("CARGO_PKG_VERSION").into(),
        wall_time_seconds: wall.as_secs_f64(),
        workers,
        artifacts: entries,
    };
    let path = dir.join("manifest.json");
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    fs::write(&path, bytes).map_err(|e| RunError::Output(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}
