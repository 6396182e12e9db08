//! Run manifests and staged output directories.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use widac_core::dataio::write_atomic;

use crate::commands::Command;
use crate::config::PipelineConfig;

pub const MANIFEST_NAME: &str = "manifest.json";
pub const TOOL: &str = "widac";

/// Everything needed to re-run a command: the command with its arguments,
/// the fully resolved config, and digests of what went in and came out.
/// Holds no timestamps or machine details, so equal runs give equal files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub config: PipelineConfig,
    pub config_digest: String,
    pub seeds: BTreeMap<String, u64>,
    /// Input path as given on the command line -> SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the output directory -> SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let mut de = serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(&mut de)
            .map_err(|e| anyhow::anyhow!("manifest field `{}`: {}", e.path(), e.inner()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Outputs are written into a staging directory and only moved into place,
/// with the manifest last, once the whole command has succeeded.
pub struct Staging {
    out_dir: PathBuf,
    dir: tempfile::TempDir,
    files: Vec<String>,
}

impl Staging {
    pub fn new(out_dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        let dir = tempfile::Builder::new()
            .prefix(".staging-")
            .tempdir_in(out_dir)
            .with_context(|| format!("staging in {}", out_dir.display()))?;
        Ok(Staging {
            out_dir: out_dir.to_path_buf(),
            dir,
            files: Vec::new(),
        })
    }

    /// Path to write output `name` to.
    pub fn path(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.dir.path().join(name)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
        let p = self.path(name);
        write_atomic(&p, contents.as_ref())?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s)
    }

    /// Digests every staged file, moves it into the output directory and
    /// writes the manifest.
    pub fn commit(self, mut manifest: Manifest) -> anyhow::Result<Manifest> {
        let mut moved = Vec::new();
        for name in &self.files {
            let from = self.dir.path().join(name);
            if !from.exists() {
                bail!("stage did not produce its output {name}");
            }
            manifest.outputs.insert(name.clone(), sha256_file(&from)?);
            moved.push((from, self.out_dir.join(name)));
        }
        for (from, to) in moved {
            fs::rename(&from, &to).with_context(|| format!("moving output to {}", to.display()))?;
        }
        write_atomic(&self.out_dir.join(MANIFEST_NAME), manifest.to_json().as_bytes())?;
        Ok(manifest)
    }
}
