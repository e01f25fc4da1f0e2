use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use spopo::comb::CombParams;
use spopo::io::write_json;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub config_path: String,
    pub config: CombParams,
    pub seed: Option<u64>,
    pub arguments: serde_json::Value,
    pub threads: usize,
    pub parallel: bool,
    pub wall_time_s: f64,
    pub outputs: Vec<OutputEntry>,
}

/// Output directory of one run; records every file written through it.
pub struct RunDir {
    dir: PathBuf,
    files: Vec<String>,
    start: Instant,
}

impl RunDir {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        let probe = dir.join(format!(".probe-{}", std::process::id()));
        fs::write(&probe, b"").with_context(|| format!("output directory {} is not writable", dir.display()))?;
        fs::remove_file(&probe)?;
        Ok(RunDir {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            start: Instant::now(),
        })
    }

    /// Path of output `name`, registered for the manifest.
    pub fn file(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.dir.join(name)
    }

    pub fn finish(
        self,
        subcommand: &'static str,
        config_path: &Path,
        config: &CombParams,
        seed: Option<u64>,
        arguments: serde_json::Value,
    ) -> Result<RunManifest> {
        let mut outputs = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let path = self.dir.join(name);
            let bytes = fs::read(&path).with_context(|| format!("missing output {}", path.display()))?;
            outputs.push(OutputEntry {
                file: name.clone(),
                sha256: hex_digest(&bytes),
                bytes: bytes.len() as u64,
            });
        }
        let manifest = RunManifest {
            tool: "spopo",
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            config_path: config_path.display().to_string(),
            config: config.clone(),
            seed,
            arguments,
            threads: crate::thread_count(),
            parallel: cfg!(feature = "parallel"),
            wall_time_s: self.start.elapsed().as_secs_f64(),
            outputs,
        };
        write_json(&self.dir.join(MANIFEST), &manifest)?;
        Ok(manifest)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
