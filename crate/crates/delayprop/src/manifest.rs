//! Run manifests: a JSON record written next to every set of outputs.
//!
//! A manifest captures what produced the artifacts sitting beside it — the
//! subcommand, the resolved configuration snapshot, seeds, input-file hashes,
//! output names, and timing — so a run can be audited or reproduced later.
//! Re-running the same tool version with the manifest's config and seed in
//! deterministic mode reproduces the outputs bit-exactly.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Provenance record for one command invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Subcommand that produced the outputs.
    pub command: String,
    pub tool_version: String,
    /// Resolved configuration snapshot (after flag overrides), if the
    /// command took one.
    pub config: Option<serde_json::Value>,
    /// Seed the command ran with, if it used randomness.
    pub seed: Option<u64>,
    pub deterministic: bool,
    pub threads: usize,
    /// SHA-256 of every input file, keyed by the path as given.
    pub input_hashes: BTreeMap<String, String>,
    /// Output files, relative to the manifest's directory.
    pub outputs: Vec<String>,
    /// Zeroed in deterministic mode so reruns compare bit-equal.
    pub wallclock_s: f64,
}

impl RunManifest {
    pub fn new(command: &str) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            tool_version: crate::VERSION.to_string(),
            config: None,
            seed: None,
            deterministic: false,
            threads: rayon::current_num_threads(),
            input_hashes: BTreeMap::new(),
            outputs: Vec::new(),
            wallclock_s: 0.0,
        }
    }

    /// Record an input file's hash under its display path.
    pub fn hash_input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.input_hashes.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn set_wallclock(&mut self, seconds: f64) {
        self.wallclock_s = if self.deterministic { 0.0 } else { seconds };
    }

    /// Write `manifest.json` into `dir` and return its path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        self.write_named(&path)?;
        Ok(path)
    }

    /// Write the manifest to an explicit path (for commands whose output is a
    /// single file rather than a directory).
    pub fn write_named(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidConfig(format!("serializing manifest: {e}")))?;
        std::fs::write(path, json.as_bytes())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// Hex SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("hashing {}", path.display()), e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file
            .read(&mut buf)
            .map_err(|e| Error::io(format!("hashing {}", path.display()), e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_matches_the_known_empty_and_abc_digests() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty");
        std::fs::write(&empty, b"").unwrap();
        assert_eq!(
            sha256_file(&empty).unwrap(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        let abc = dir.path().join("abc");
        std::fs::write(&abc, b"abc").unwrap();
        assert_eq!(
            sha256_file(&abc).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.toml");
        std::fs::write(&input, "x = 1\n").unwrap();

        let mut m = RunManifest::new("train");
        m.seed = Some(7);
        m.deterministic = true;
        m.hash_input(&input).unwrap();
        m.outputs.push("checkpoint.bin".into());
        m.set_wallclock(12.5);
        assert_eq!(m.wallclock_s, 0.0, "deterministic mode zeroes wallclock");

        let path = m.write(dir.path()).unwrap();
        let back: RunManifest =
            serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(back.command, "train");
        assert_eq!(back.seed, Some(7));
        assert_eq!(back.input_hashes.len(), 1);
        assert_eq!(back.outputs, vec!["checkpoint.bin".to_string()]);
    }
}
