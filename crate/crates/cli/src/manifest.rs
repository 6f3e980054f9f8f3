use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const RUN_MANIFEST: &str = "run_manifest.json";

/// Written next to every output so a run can be reproduced and checked.
/// Carries no timestamp: identical inputs and flags give identical bytes.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: serde_json::Value,
    /// input path → sha256
    pub inputs: BTreeMap<String, String>,
    /// output file name → sha256
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize) -> Result<Self> {
        Ok(RunManifest {
            command: command.to_owned(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), digest(path)?);
        Ok(())
    }

    pub fn write(mut self, dir: &Path, outputs: &[PathBuf]) -> Result<PathBuf> {
        for p in outputs {
            let name = p.strip_prefix(dir).unwrap_or(p).display().to_string();
            self.outputs.insert(name, digest(p)?);
        }
        let path = dir.join(RUN_MANIFEST);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, &self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(path)
    }
}

pub fn digest(path: &Path) -> Result<String> {
    let mut file = File::open(path).with_context(|| format!("hashing {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// `<out>/<command>/<tag>`, created fresh.
pub fn run_dir(out: &Path, command: &str, tag: Option<&str>) -> io::Result<PathBuf> {
    let tag = match tag {
        Some(t) => t.to_owned(),
        None => chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string(),
    };
    let dir = out.join(command).join(tag);
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
