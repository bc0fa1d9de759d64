use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use kvtomo::experiments::data::{hex, write_atomic};
use kvtomo::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

/// Record of one command run: inputs, versions and every produced file
/// with its content hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub config_sha256: Option<String>,
    pub seeds: Vec<u64>,
    pub library_version: String,
    pub mesh_checksums: Vec<String>,
    pub artifacts: Vec<Artifact>,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
}

pub fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let bytes = std::fs::read(path)?;
    Ok((hex(&Sha256::digest(&bytes)), bytes.len() as u64))
}

impl RunManifest {
    pub fn new(command: &str, config_path: Option<&Path>) -> Result<RunManifest> {
        let config_sha256 = match config_path {
            Some(p) => Some(sha256_file(p)?.0),
            None => None,
        };
        Ok(RunManifest {
            command: command.into(),
            config_path: config_path.map(Path::to_path_buf),
            config_sha256,
            seeds: Vec::new(),
            library_version: env!("CARGO_PKG_VERSION").into(),
            mesh_checksums: Vec::new(),
            artifacts: Vec::new(),
            started_unix_s: now(),
            finished_unix_s: 0.0,
        })
    }

    pub fn add(&mut self, path: &Path) -> Result<()> {
        let (sha256, bytes) = sha256_file(path)?;
        self.artifacts.push(Artifact { path: path.to_path_buf(), sha256, bytes });
        Ok(())
    }

    pub fn add_mesh(&mut self, checksum: String) {
        if !self.mesh_checksums.contains(&checksum) {
            self.mesh_checksums.push(checksum);
        }
    }

    /// Writes `<dir>/<command>.manifest.json` and returns its path.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        self.finished_unix_s = now();
        let path = dir.join(format!("{}.manifest.json", self.command));
        let text = serde_json::to_string_pretty(&self).expect("manifests serialize");
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}
