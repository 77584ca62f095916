//! Run manifests: what was run, on which inputs, with which settings.
//!
//! A manifest is written to the output directory before any output, then
//! rewritten with the finish time once the run completes. The timestamps
//! are the only fields that differ between two runs of the same command.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Pipeline stages with their own derived seed.
pub const STAGES: [&str; 6] = ["filter", "annotate", "fit", "score", "network", "simulate"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub seed: u64,
    /// Child seed of each stage, from [`seed::stage_seed`].
    pub stage_seeds: BTreeMap<String, u64>,
    pub threads: Option<usize>,
    /// Resolved settings, defaults included.
    pub config: serde_json::Value,
    /// Command-line arguments after the program name.
    pub args: Vec<String>,
    pub inputs: Vec<InputDigest>,
    pub started: String,
    pub finished: Option<String>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn sha256_file(path: &Path) -> Result<InputDigest> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let k = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if k == 0 {
            break;
        }
        h.update(&buf[..k]);
        bytes += k as u64;
    }
    Ok(InputDigest {
        path: path.to_path_buf(),
        sha256: hex::encode(h.finalize()),
        bytes,
    })
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: u64, threads: Option<usize>, config: serde_json::Value, args: Vec<String>) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            stage_seeds: STAGES.iter().map(|s| (s.to_string(), seed::stage_seed(seed, s))).collect(),
            threads,
            config,
            args,
            inputs: Vec::new(),
            started: now(),
            finished: None,
        }
    }

    /// Records the digest of an input file.
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let d = sha256_file(path)?;
        if !self.inputs.iter().any(|x| x.path == d.path) {
            self.inputs.push(d);
        }
        Ok(())
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        self.stage_seeds.get(stage).copied().unwrap_or_else(|| seed::stage_seed(self.seed, stage))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::parse("manifest", e))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Stamps the finish time and rewrites the manifest.
    pub fn finish(&mut self, dir: &Path) -> Result<()> {
        self.finished = Some(now());
        self.write(dir)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse("manifest", e))
    }

    /// Inputs whose current digest no longer matches the recorded one.
    pub fn stale_inputs(&self) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for d in &self.inputs {
            if sha256_file(&d.path)?.sha256 != d.sha256 {
                out.push(d.path.clone());
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        std::fs::write(&p, b"abc").unwrap();
        let d = sha256_file(&p).unwrap();
        assert_eq!(d.sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(d.bytes, 3);
    }

    #[test]
    fn round_trip_and_staleness() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        std::fs::write(&input, "one").unwrap();
        let mut m = RunManifest::new("fit", 7, Some(2), serde_json::json!({"draws": 10}), vec!["fit".into()]);
        m.add_input(&input).unwrap();
        m.write(dir.path()).unwrap();
        let back = RunManifest::read(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.stage_seed("fit"), seed::stage_seed(7, "fit"));
        assert!(back.stale_inputs().unwrap().is_empty());
        std::fs::write(&input, "two").unwrap();
        assert_eq!(back.stale_inputs().unwrap(), vec![input]);
    }
}
