//! Run manifest: everything needed to replay a run, written before any other output.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "run.toml";

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    /// Arguments after the program name.
    pub command: Vec<String>,
    pub version: String,
    pub seed: u64,
    /// Output paths relative to the run directory.
    pub artifacts: Vec<String>,
    /// SHA-256 of every input file or directory, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
    /// Fully resolved settings of the command.
    pub config: toml::Value,
}

impl RunManifest {
    pub fn new(seed: u64, config: &impl Serialize) -> Result<Self> {
        Ok(RunManifest {
            command: std::env::args().skip(1).collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            artifacts: Vec::new(),
            inputs: BTreeMap::new(),
            config: toml::Value::try_from(config)?,
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), hash_path(path)?);
        Ok(())
    }

    pub fn artifact(&mut self, name: impl Into<String>) {
        self.artifacts.push(name.into());
    }

    /// Writes `run.toml` into `dir` through a temporary file and a rename.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self)?;
        let tmp = dir.join(format!(".{MANIFEST_FILE}.tmp"));
        let mut f =
            fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, dir.join(MANIFEST_FILE))?;
        Ok(())
    }
}

/// Hash of a file's bytes, or of a directory's regular files (names and contents, in
/// name order, skipping run manifests).
pub fn hash_path(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut names: Vec<_> = fs::read_dir(path)
            .with_context(|| format!("reading {}", path.display()))?
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n != MANIFEST_FILE)
            .collect();
        names.sort();
        for n in names {
            let bytes = fs::read(path.join(&n))?;
            h.update((n.len() as u64).to_le_bytes());
            h.update(n.as_bytes());
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
    } else {
        h.update(fs::read(path).with_context(|| format!("reading {}", path.display()))?);
    }
    Ok(hex::encode(h.finalize()))
}
