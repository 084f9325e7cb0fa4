//! Every run leaves a manifest behind: the resolved config, its hash, and
//! the code versions involved. Together with the seeds inside the config
//! that is enough to replay the run bit-for-bit, so nothing time- or
//! host-dependent is allowed in here.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::errors::{io_err, CliError};

#[derive(Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub config_sha256: String,
    pub config: &'a RunConfig,
    pub versions: Versions,
    pub outputs: &'a [String],
}

#[derive(Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct Versions {
    pub fedanomaly: &'static str,
    pub cli: &'static str,
    pub wire: u16,
    pub checkpoint: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Versions {
            fedanomaly: fedanomaly::VERSION,
            cli: env!("CARGO_PKG_VERSION"),
            wire: fedanomaly::transport::WIRE_VERSION,
            checkpoint: fedanomaly::model::CHECKPOINT_VERSION,
        }
    }
}

pub fn config_hash(cfg: &RunConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `run_manifest.json` (or a role-suffixed variant) under `out`.
pub fn write_manifest(
    out: &Path,
    command: &str,
    cfg: &RunConfig,
    outputs: &[String],
    role_suffix: Option<&str>,
) -> Result<(), CliError> {
    let name = match role_suffix {
        None => "run_manifest.json".to_string(),
        Some(role) => format!("run_manifest.{role}.json"),
    };
    let manifest = Manifest {
        command,
        config_sha256: config_hash(cfg),
        config: cfg,
        versions: Versions::default(),
        outputs,
    };
    let path = out.join(name);
    let mut body = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    body.push(b'\n');
    std::fs::write(&path, body).map_err(io_err(&path))
}
