use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::error::{contract_err, Result};
use crate::export::write_atomic;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub experiment: String,
    pub config: ExperimentConfig,
    pub seeds: BTreeMap<String, u64>,
    /// SHA-256 over the crate version and the resolved config JSON.
    pub config_hash: String,
    pub crate_version: String,
    pub started_at: String,
    pub duration_s: f64,
    /// Every file in the run directory, sorted, including this manifest.
    pub files: Vec<String>,
    pub notes: Vec<String>,
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serialises");
    let mut h = Sha256::new();
    h.update(env!("CARGO_PKG_VERSION").as_bytes());
    h.update([0u8]);
    h.update(&json);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Output root: explicit argument, then `SEMG_OUT`, then `./runs`.
pub fn output_root(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match std::env::var_os("SEMG_OUT") {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from("runs"),
    }
}

/// A run directory under construction.
///
/// Files are written into a hidden staging directory that is renamed into
/// place by [`RunDir::finish`]; dropping an unfinished run removes it.
#[derive(Debug)]
pub struct RunDir {
    experiment: String,
    staging: PathBuf,
    target: PathBuf,
    started: Instant,
    started_at: String,
    notes: Vec<String>,
    finished: bool,
}

impl RunDir {
    pub fn create(root: &Path, experiment: &str, seed: u64) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        let now = chrono::Utc::now();
        let stamp = now.format("%Y%m%dT%H%M%S%.3fZ").to_string();
        let base = format!("{experiment}-{seed}-{stamp}");
        let mut k = 0;
        let (target, staging) = loop {
            let name = if k == 0 {
                base.clone()
            } else {
                format!("{base}.{k}")
            };
            k += 1;
            let target = root.join(&name);
            let staging = root.join(format!(".{name}.partial"));
            if target.exists() {
                continue;
            }
            match std::fs::create_dir(&staging) {
                Ok(()) => break (target, staging),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(e.into()),
            }
        };
        Ok(Self {
            experiment: experiment.to_string(),
            staging,
            target,
            started: Instant::now(),
            started_at: now.to_rfc3339(),
            notes: Vec::new(),
            finished: false,
        })
    }

    /// Path for an output file; `name` is relative to the run directory.
    pub fn file(&self, name: &str) -> PathBuf {
        self.staging.join(name)
    }

    /// Final location of the run directory.
    pub fn target(&self) -> &Path {
        &self.target
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    fn list_files(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        let mut stack = vec![self.staging.clone()];
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(&dir)? {
                let path = entry?.path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    let rel = path.strip_prefix(&self.staging).expect("inside staging");
                    out.push(rel.to_string_lossy().replace('\\', "/"));
                }
            }
        }
        Ok(out)
    }

    /// Writes the manifest and moves the directory into place.
    pub fn finish(mut self, config: &ExperimentConfig) -> Result<(PathBuf, RunManifest)> {
        let mut files = self.list_files()?;
        if files.iter().any(|f| f == MANIFEST_FILE) {
            return Err(contract_err(
                "experiments must not write the manifest themselves",
            ));
        }
        files.push(MANIFEST_FILE.to_string());
        files.sort();
        let manifest = RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            experiment: self.experiment.clone(),
            config: config.clone(),
            seeds: config
                .seed_table()
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            config_hash: config_hash(config),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: self.started_at.clone(),
            duration_s: self.started.elapsed().as_secs_f64(),
            files,
            notes: std::mem::take(&mut self.notes),
        };
        let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        json.push('\n');
        write_atomic(&self.file(MANIFEST_FILE), json.as_bytes())?;
        std::fs::rename(&self.staging, &self.target)?;
        self.finished = true;
        Ok((self.target.clone(), manifest))
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        if !self.finished {
            let _ = std::fs::remove_dir_all(&self.staging);
        }
    }
}
