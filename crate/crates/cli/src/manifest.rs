use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use pitlane_core::Result;

#[derive(Debug, Serialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to repeat a run: the command line, the seed and the
/// hashes of every file read or written. No timestamps, so reruns produce
/// identical manifests.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn hashes(paths: &[PathBuf]) -> Result<Vec<FileHash>> {
    paths
        .iter()
        .map(|p| {
            Ok(FileHash {
                path: p.clone(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

pub struct Recorder {
    command: String,
    seed: u64,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(command: &str, seed: u64) -> Self {
        Recorder {
            command: command.to_string(),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    pub fn input_opt(&mut self, p: Option<&PathBuf>) {
        if let Some(p) = p {
            self.input(p);
        }
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }

    /// Writes `<first output>.manifest.json`. Runs without outputs write none.
    pub fn finish(self) -> Result<()> {
        let Some(first) = self.outputs.first() else {
            return Ok(());
        };
        let mut name = first.as_os_str().to_owned();
        name.push(".manifest.json");
        let m = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: self.command.clone(),
            args: std::env::args().skip(1).collect(),
            seed: self.seed,
            inputs: hashes(&self.inputs)?,
            outputs: hashes(&self.outputs)?,
        };
        std::fs::write(PathBuf::from(name), serde_json::to_string_pretty(&m)? + "\n")?;
        Ok(())
    }
}
