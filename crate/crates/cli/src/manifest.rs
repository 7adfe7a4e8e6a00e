//! Per-run manifest: what ran, with which config and seed, on which inputs,
//! producing which outputs. Manifests carry no timestamps so identical runs
//! write identical manifests.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> CliResult<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            sha256: file_sha256(path)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub tool_version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// The resolved run config; enough to re-run the stage.
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| CliError::io(e.to_string()).at(path))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(e.to_string()).at(path))?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| CliError::config(e.to_string()).at(path))?;
        if m.manifest_version != MANIFEST_VERSION {
            return Err(CliError::config(format!(
                "unsupported manifest version {}",
                m.manifest_version
            ))
            .at(path));
        }
        Ok(m)
    }

    /// Inputs whose current content no longer matches the recorded digest.
    pub fn changed_inputs(&self) -> CliResult<Vec<PathBuf>> {
        let mut out = Vec::new();
        for d in &self.inputs {
            if file_sha256(&d.path)? != d.sha256 {
                out.push(d.path.clone());
            }
        }
        Ok(out)
    }
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    let mut file = fs::File::open(path).map_err(|e| CliError::io(e.to_string()).at(path))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file
            .read(&mut buf)
            .map_err(|e| CliError::io(e.to_string()).at(path))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}
