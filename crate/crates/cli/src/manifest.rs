//! Run manifests: what was run, on which data, with which settings.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use coffee_core::RatingTable;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct DatasetStats {
    pub path: PathBuf,
    pub sha256: String,
    pub raw_ratings: usize,
    pub raw_users: usize,
    pub users: usize,
    pub items: usize,
    pub ratings: usize,
    pub density: f64,
    pub scale: Vec<f64>,
    pub threshold: f64,
    /// ratings per level, lowest first
    pub level_counts: Vec<usize>,
}

impl DatasetStats {
    pub fn new(path: &Path, raw_ratings: usize, raw_users: usize, table: &RatingTable) -> Result<Self> {
        let mut level_counts = vec![0; table.n_levels()];
        for r in table.ratings() {
            level_counts[r.level] += 1;
        }
        Ok(Self {
            path: path.to_path_buf(),
            sha256: file_sha256(path)?,
            raw_ratings,
            raw_users,
            users: table.n_users(),
            items: table.n_items(),
            ratings: table.len(),
            density: table.len() as f64 / (table.n_users() as f64 * table.n_items() as f64),
            scale: table.scale().values().to_vec(),
            threshold: table.scale().threshold(),
            level_counts,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    /// sha256 of the canonical JSON of `config`
    pub config_hash: String,
    pub config: Value,
    pub dataset: Option<DatasetStats>,
    pub threads: usize,
    pub outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(command: &str, config: Value) -> Self {
        Self {
            command: command.to_string(),
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: hex::encode(Sha256::digest(config.to_string().as_bytes())),
            config,
            dataset: None,
            threads: rayon::current_num_threads(),
            outputs: Vec::new(),
        }
    }

    /// Write next to `target` (as `<target>.manifest.json`) or to `explicit`;
    /// with neither, log it.
    pub fn emit(&self, explicit: Option<&Path>, target: Option<&Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        let path = explicit
            .map(Path::to_path_buf)
            .or_else(|| target.map(sidecar));
        match path {
            Some(p) => {
                std::fs::write(&p, text + "\n").with_context(|| format!("writing {}", p.display()))?;
                log::info!("manifest written to {}", p.display());
            }
            None => log::info!("manifest: {}", serde_json::to_string(self)?),
        }
        Ok(())
    }
}

pub fn sidecar(target: &Path) -> PathBuf {
    let mut name = target.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    target.with_file_name(name)
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let mut reader = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = reader.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_name() {
        assert_eq!(sidecar(Path::new("out/model.json")), PathBuf::from("out/model.json.manifest.json"));
    }

    #[test]
    fn hash_depends_on_config_only() {
        let a = Manifest::new("train", serde_json::json!({"rank": 10}));
        let b = Manifest::new("evaluate", serde_json::json!({"rank": 10}));
        let c = Manifest::new("train", serde_json::json!({"rank": 11}));
        assert_eq!(a.config_hash, b.config_hash);
        assert_ne!(a.config_hash, c.config_hash);
        assert_eq!(a.config_hash.len(), 64);
    }

    #[test]
    fn sha_of_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        std::fs::write(&p, "abc").unwrap();
        assert_eq!(
            file_sha256(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
