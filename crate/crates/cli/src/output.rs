use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::exit::input_error;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const LOCK_FILE: &str = ".qcdistort.lock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub name: String,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub artifacts: Vec<Artifact>,
    pub checks: Vec<CheckEntry>,
    pub flags: Vec<String>,
    /// Wall-clock timing; suppressed so that manifests are reproducible.
    pub timing: Option<f64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// An output directory held under a lock file for the lifetime of a run.
pub struct OutDir {
    root: PathBuf,
    artifacts: Vec<Artifact>,
    pub checks: Vec<CheckEntry>,
    pub flags: Vec<String>,
    /// Error to report after the manifest is written.
    pub deferred: Option<anyhow::Error>,
}

impl OutDir {
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let lock = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(input_error(format!("{} is locked by another run ({})", root.display(), lock.display())));
            }
            Err(e) => return Err(e).with_context(|| format!("creating {}", lock.display())),
        }
        Ok(OutDir { root: root.to_path_buf(), artifacts: Vec::new(), checks: Vec::new(), flags: Vec::new(), deferred: None })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.artifacts.retain(|a| a.path != name);
        self.artifacts.push(Artifact { path: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    pub fn csv<T: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?;
        self.write(name, &bytes)
    }

    pub fn check(&mut self, name: &str, status: &str, detail: Option<String>) {
        self.checks.push(CheckEntry { name: name.into(), status: status.into(), detail });
    }

    pub fn finish(mut self, command: &str, seed: u64, config: &impl Serialize) -> Result<(RunManifest, Option<anyhow::Error>)> {
        self.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            command: command.into(),
            seed,
            config: serde_json::to_value(config)?,
            artifacts: std::mem::take(&mut self.artifacts),
            checks: std::mem::take(&mut self.checks),
            flags: std::mem::take(&mut self.flags),
            timing: None,
        };
        let mut s = serde_json::to_string_pretty(&manifest)?;
        s.push('\n');
        fs::write(self.root.join(MANIFEST_FILE), s)?;
        Ok((manifest, self.deferred.take()))
    }
}

impl Drop for OutDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.root.join(LOCK_FILE));
    }
}

/// Read a manifest and check every listed artifact against its hash.
pub fn load_verified(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    let m: RunManifest =
        serde_json::from_str(&text).map_err(|e| input_error(format!("{}: malformed manifest: {e}", path.display())))?;
    for a in &m.artifacts {
        let p = dir.join(&a.path);
        let bytes = fs::read(&p).map_err(|e| input_error(format!("{}: {e}", p.display())))?;
        if sha256_hex(&bytes) != a.sha256 {
            return Err(input_error(format!("{}: hash mismatch", p.display())));
        }
    }
    Ok(m)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    serde_json::from_reader(f).map_err(|e| input_error(format!("{}: {e}", path.display())))
}
