use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::{config_hash, RunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{FileDigest, Manifest, MANIFEST_VERSION};

/// Seed and thread budget handed to a running stage.
#[derive(Clone, Copy, Debug)]
pub struct Context {
    pub seed: u64,
    pub workers: usize,
}

/// One pipeline stage with a serializable config.
pub trait Stage: Serialize + DeserializeOwned + Default + Clone {
    const COMMAND: &'static str;

    fn validate(&self) -> CliResult<()> {
        Ok(())
    }

    /// Files read by the stage; hashed into the manifest.
    fn inputs(&self) -> Vec<PathBuf>;

    /// Where the manifest goes unless `--manifest` says otherwise.
    fn default_manifest(&self) -> PathBuf;

    /// Runs the stage and returns every file it wrote.
    fn run(&self, ctx: &Context) -> CliResult<Vec<PathBuf>>;
}

/// Validates, logs, runs and records one stage.
pub fn execute<S: Stage>(
    config: &RunConfig<S>,
    manifest_path: Option<&Path>,
) -> CliResult<Manifest> {
    config.stage.validate()?;
    let hash = config_hash(config);
    let value = serde_json::to_value(config)?;
    log::info!("{} config {}", S::COMMAND, serde_json::to_string(&value)?);
    log::info!("{} config hash {hash}", S::COMMAND);
    let inputs = config.stage.inputs();
    for p in &inputs {
        if !p.is_file() {
            return Err(CliError::io("input file not found").at(p));
        }
    }
    let input_digests = inputs
        .iter()
        .map(|p| FileDigest::of(p))
        .collect::<CliResult<Vec<_>>>()?;
    let ctx = Context {
        seed: config.seed,
        workers: config.workers,
    };
    let outputs = config.stage.run(&ctx)?;
    let output_digests = outputs
        .iter()
        .map(|p| FileDigest::of(p))
        .collect::<CliResult<Vec<_>>>()?;
    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: S::COMMAND.to_string(),
        config_hash: hash,
        seed: config.seed,
        config: value,
        inputs: input_digests,
        outputs: output_digests,
    };
    let path = manifest_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.stage.default_manifest());
    crate::util::create_parent(&path)?;
    manifest.save(&path)?;
    log::info!(
        "{} wrote {} files; manifest {}",
        S::COMMAND,
        outputs.len(),
        path.display()
    );
    Ok(manifest)
}
