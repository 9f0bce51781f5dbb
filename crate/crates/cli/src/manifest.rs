//! Run manifests: what produced each output file.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::error::CliResult;
use crate::io::{file_sha256, write_text};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileRecord {
    pub fn of(path: &Path) -> CliResult<Self> {
        Ok(Self { path: path.to_path_buf(), sha256: file_sha256(path)? })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// Raw command line after the program name.
    pub arguments: Vec<String>,
    /// Effective configuration after merging config files and flags.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub version: String,
    pub duration_seconds: f64,
}

/// Collects inputs and outputs while a command runs.
pub struct ManifestBuilder {
    command: String,
    arguments: Vec<String>,
    started: Instant,
    inputs: Vec<FileRecord>,
    outputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn start(command: &str, arguments: &[String]) -> Self {
        Self {
            command: command.into(),
            arguments: arguments.to_vec(),
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.push(FileRecord::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Hashes the recorded outputs and writes the manifest to `path`.
    pub fn finish(self, config: serde_json::Value, seed: Option<u64>, path: &Path) -> CliResult<RunManifest> {
        let outputs = self.outputs.iter().map(|p| FileRecord::of(p)).collect::<CliResult<Vec<_>>>()?;
        let manifest = RunManifest {
            command: self.command,
            arguments: self.arguments,
            config,
            seed,
            inputs: self.inputs,
            outputs,
            version: env!("CARGO_PKG_VERSION").into(),
            duration_seconds: self.started.elapsed().as_secs_f64(),
        };
        write_text(path, &(serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n"))?;
        Ok(manifest)
    }
}

/// `<file>.manifest.json` next to a single-file output.
pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}
