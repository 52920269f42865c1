use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
struct FileHash {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    seed: Option<u64>,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Output directory that records every file it writes, plus hashed inputs,
/// and closes with `manifest.json`.
pub struct Artifacts {
    dir: PathBuf,
    command: &'static str,
    seed: Option<u64>,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
}

impl Artifacts {
    pub fn create(dir: &Path, command: &'static str) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), command, seed: None, inputs: Vec::new(), outputs: Vec::new() })
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(FileHash { path: path.display().to_string(), sha256: sha256_hex(bytes) });
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let bytes = contents.as_ref();
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(FileHash { path: name.to_string(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s)
    }

    pub fn finish(self) -> Result<PathBuf> {
        let m = Manifest {
            tool: "ddssm",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            seed: self.seed,
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let path = self.dir.join("manifest.json");
        let mut s = serde_json::to_string_pretty(&m)?;
        s.push('\n');
        fs::write(&path, s).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
