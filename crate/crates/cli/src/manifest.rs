use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

/// Version of every metrics CSV layout written by this tool.
pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub schema_version: u32,
}

/// Written next to the outputs of every run. Holds no timestamps, so it is
/// itself reproducible.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub seed: u64,
    pub config_hash: String,
    pub config: &'a ExperimentConfig,
    pub outputs: Vec<OutputFile>,
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    let digest = Sha256::digest(config.to_toml().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_manifest(dir: &Path, command: &str, config: &ExperimentConfig, outputs: &[String]) -> Result<()> {
    let manifest = Manifest {
        tool: "grp",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: config.seed,
        config_hash: config_hash(config),
        config,
        outputs: outputs
            .iter()
            .map(|p| OutputFile {
                path: p.clone(),
                schema_version: CSV_SCHEMA_VERSION,
            })
            .collect(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
