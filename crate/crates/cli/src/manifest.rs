use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_NAME: &str = "manifest.json";

/// Record of one invocation; `--config manifest.json` replays it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Every setting the command ran with, defaults included.
    pub config: Value,
    pub seed: u64,
    /// SHA-256 of every file read.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every file written.
    pub outputs: BTreeMap<String, String>,
    pub wall_time_secs: f64,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// Collects inputs and outputs while a command runs, then writes the manifest.
pub struct Run {
    command: &'static str,
    out: PathBuf,
    started: Instant,
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
}

impl Run {
    pub fn start(command: &'static str, out: &Path) -> CliResult<Self> {
        fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        Ok(Self { command, out: out.to_path_buf(), started: Instant::now(), inputs: BTreeMap::new(), outputs: Vec::new() })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let digest = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Writes `name` inside the output directory.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.out.join(name);
        write_atomic(&path, bytes)?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    /// Registers a file some other writer produced.
    pub fn produced(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    pub fn finish(self, config: &impl Serialize, seed: u64) -> CliResult<RunManifest> {
        let mut outputs = BTreeMap::new();
        for path in &self.outputs {
            outputs.insert(path.display().to_string(), sha256_file(path)?);
        }
        let manifest = RunManifest {
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config).map_err(|e| CliError::Runtime(e.to_string()))?,
            seed,
            inputs: self.inputs,
            outputs,
            wall_time_secs: self.started.elapsed().as_secs_f64(),
        };
        let body = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
        write_atomic(&self.out.join(MANIFEST_NAME), body.as_bytes())?;
        Ok(manifest)
    }
}
