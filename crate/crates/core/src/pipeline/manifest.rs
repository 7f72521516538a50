//! Per-stage run manifests, content digests of stage outputs, and the
//! output-directory lock.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::Stage;
use crate::digest::{sha256_hex, sha256_parts};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".phonmap.lock";
pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: Stage,
    pub tool_version: String,
    /// Digest of the whole configuration (output directory excluded).
    pub config_digest: String,
    /// Digest of the configuration sections this stage depends on.
    pub stage_config_digest: String,
    pub seed: u64,
    /// Upstream stage digests and external input files.
    pub inputs: BTreeMap<String, String>,
    /// Output paths relative to the run directory, with content digests.
    pub outputs: BTreeMap<String, String>,
    /// Digest over everything above except timing.
    pub stage_digest: String,
    pub wall_time_secs: f64,
}

impl RunManifest {
    pub fn seal(
        stage: Stage,
        config_digest: String,
        stage_config_digest: String,
        seed: u64,
        inputs: BTreeMap<String, String>,
        outputs: BTreeMap<String, String>,
        wall_time_secs: f64,
    ) -> Self {
        let mut parts: Vec<String> = vec![stage.name().into(), stage_config_digest.clone()];
        for (k, v) in inputs.iter().chain(&outputs) {
            parts.push(k.clone());
            parts.push(v.clone());
        }
        let stage_digest = sha256_parts(parts.iter().map(|s| s.as_bytes()));
        Self {
            stage,
            tool_version: TOOL_VERSION.into(),
            config_digest,
            stage_config_digest,
            seed,
            inputs,
            outputs,
            stage_digest,
            wall_time_secs,
        }
    }

    pub fn path(root: &Path, stage: Stage) -> PathBuf {
        root.join(stage.name()).join(MANIFEST_FILE)
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        let path = Self::path(root, self.stage);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Reads a stage's manifest; a missing file is a dependency error.
    pub fn read(root: &Path, stage: Stage) -> Result<Self> {
        let path = Self::path(root, stage);
        if !path.exists() {
            return Err(Error::Dependency {
                path,
                hint: format!("run `phonmap {}` first", stage.command()),
            });
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Self = serde_json::from_str(&text)?;
        if manifest.stage != stage {
            return Err(Error::Integrity(format!("{} describes another stage", path.display())));
        }
        Ok(manifest)
    }

    /// Recomputes every recorded output digest.
    pub fn verify_outputs(&self, root: &Path) -> Result<()> {
        for (rel, expected) in &self.outputs {
            let path = root.join(rel);
            if !path.exists() {
                return Err(Error::Dependency {
                    path,
                    hint: format!("re-run `phonmap {}`", self.stage.command()),
                });
            }
            if &path_digest(&path)? != expected {
                return Err(Error::Integrity(format!(
                    "{} changed after `{}` wrote it",
                    path.display(),
                    self.stage.command()
                )));
            }
        }
        Ok(())
    }
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Digest of a file, or of a directory tree as sorted (relative path, digest) pairs.
pub fn path_digest(path: &Path) -> Result<String> {
    if !path.is_dir() {
        return file_digest(path);
    }
    let mut files = Vec::new();
    collect_files(path, path, &mut files)?;
    files.sort();
    let mut parts = Vec::with_capacity(files.len() * 2);
    for rel in &files {
        parts.push(rel.clone());
        parts.push(file_digest(&path.join(rel))?);
    }
    Ok(sha256_parts(parts.iter().map(|s| s.as_bytes())))
}

fn collect_files(base: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(base, &path, out)?;
        } else {
            let rel = path.strip_prefix(base).expect("inside base");
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

/// Exclusive ownership of a run directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        let mut file = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                Error::InvalidState(format!(
                    "{} is in use by another run (delete {} if that run is gone)",
                    dir.display(),
                    path.display()
                ))
            } else {
                Error::io(&path, e)
            }
        })?;
        writeln!(file, "{}", std::process::id()).map_err(|e| Error::io(&path, e))?;
        Ok(Self { path })
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
