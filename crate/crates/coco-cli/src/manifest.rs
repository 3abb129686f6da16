//! Run manifests: resolved configuration, toolkit version, and input
//! checksums, written beside each command's outputs so a run can be
//! reproduced from the manifest alone.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use coco_core::error::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub toolkit_version: &'static str,
    pub subcommand: String,
    pub resolved_config: serde_json::Value,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(subcommand: &str, resolved_config: serde_json::Value) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            toolkit_version: coco_core::TOOLKIT_VERSION,
            subcommand: subcommand.to_string(),
            resolved_config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> Result<(), Error> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.push(InputRecord {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Write the manifest next to the given output: `<out>.manifest.json` for
    /// files, `manifest.json` inside directories.
    pub fn write_beside(&self, out: &Path) -> Result<PathBuf, Error> {
        let path = if out.is_dir() {
            out.join("manifest.json")
        } else {
            let mut name = out.file_name().unwrap_or_default().to_os_string();
            name.push(".manifest.json");
            out.with_file_name(name)
        };
        let body = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
