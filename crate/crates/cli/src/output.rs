use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::UsageError;

#[derive(Debug, Serialize)]
struct InputRecord {
    file: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config: &'a RunConfig,
    inputs: &'a BTreeMap<String, InputRecord>,
    outputs: &'a [String],
    version: &'static str,
}

/// Output directory of one subcommand run. Inputs are digested up front so
/// a missing file is reported before any work starts.
pub struct Run {
    command: &'static str,
    dir: PathBuf,
    inputs: BTreeMap<String, InputRecord>,
    outputs: Vec<String>,
}

impl Run {
    pub fn new(command: &'static str, dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self {
            command,
            dir: dir.to_path_buf(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)
            .map_err(|e| UsageError(format!("cannot read {role} input {}: {e}", path.display())))?;
        let file = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        self.inputs.insert(
            role.to_string(),
            InputRecord {
                file,
                sha256: hex::encode(Sha256::digest(&bytes)),
            },
        );
        Ok(())
    }

    pub fn optional_input(&mut self, role: &str, path: Option<&Path>) -> Result<()> {
        match path {
            Some(p) => self.input(role, p),
            None => Ok(()),
        }
    }

    /// Path of an output file; the name is recorded in the manifest.
    pub fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.dir.join(name)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.output(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
    }

    pub fn finish(mut self, config: &RunConfig) -> Result<()> {
        self.outputs.sort();
        let manifest = Manifest {
            command: self.command,
            config,
            inputs: &self.inputs,
            outputs: &self.outputs,
            version: env!("CARGO_PKG_VERSION"),
        };
        let path = self.dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
    }
}
