//! Run manifests: everything needed to repeat a run.
//!
//! A manifest is a JSON document with these fields:
//!
//! - `format`: always `netlocal-manifest`, and `version`: currently 1;
//! - `software_version`: version of the `netlocal` binary;
//! - `command`: the fully resolved subcommand options, tagged by
//!   `subcommand`, exactly as `replay` feeds them back;
//! - `seed`: the base seed, or `null` when the command draws no randomness;
//! - `inputs`: SHA-256 digests of every input file;
//! - `outputs`: every file the run wrote, the manifest excluded;
//! - `created`: UTC time of the run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::Command;

pub const MANIFEST_FORMAT: &str = "netlocal-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub software_version: String,
    pub command: Command,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<PathBuf>,
    pub created: String,
}

impl RunManifest {
    pub fn new(command: &Command, seed: Option<u64>) -> Self {
        RunManifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            software_version: env!("CARGO_PKG_VERSION").into(),
            command: command.clone(),
            seed,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            created: chrono::Utc::now().to_rfc3339(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), digest(path)?);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let m: RunManifest =
            serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            bail!("unsupported manifest {:?} version {}", m.format, m.version);
        }
        Ok(m)
    }

    /// Fails when an input file changed since the manifest was written.
    pub fn check_inputs(&self) -> Result<()> {
        for (path, expected) in &self.inputs {
            let actual = digest(Path::new(path))?;
            if &actual != expected {
                bail!("input {path} changed since the recorded run (sha256 {actual}, recorded {expected})");
            }
        }
        Ok(())
    }
}

pub fn digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}
