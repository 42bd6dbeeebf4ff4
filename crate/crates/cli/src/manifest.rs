//! Artifact bookkeeping for `--out` directories.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::{Path, PathBuf};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Written last; contains no timestamps or absolute paths, so identical
/// runs produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub config: serde_json::Value,
    pub artifacts: Vec<Artifact>,
}

/// Records every file a command writes under the output directory.
#[derive(Debug)]
pub struct Outputs {
    root: PathBuf,
    files: BTreeSet<String>,
    seeds: BTreeMap<String, u64>,
}

impl Outputs {
    pub fn new(root: &Path) -> io::Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            files: BTreeSet::new(),
            seeds: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Absolute path for `rel`, with parent directories created.
    pub fn path(&mut self, rel: &str) -> io::Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        self.files.insert(rel.to_string());
        Ok(p)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> io::Result<()> {
        let p = self.path(rel)?;
        std::fs::write(p, bytes)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> io::Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    pub fn record_seed(&mut self, name: &str, seed: u64) {
        self.seeds.insert(name.to_string(), seed);
    }

    pub fn finish(self, command: &str, seed: u64, config: serde_json::Value) -> io::Result<Manifest> {
        let mut artifacts = Vec::with_capacity(self.files.len());
        for rel in &self.files {
            let bytes = std::fs::read(self.root.join(rel))?;
            artifacts.push(Artifact {
                path: rel.clone(),
                bytes: bytes.len() as u64,
                sha256: Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect(),
            });
        }
        let manifest = Manifest {
            tool: "formloop".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            seeds: self.seeds,
            config,
            artifacts,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        std::fs::write(self.root.join(MANIFEST_NAME), bytes)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_sorted_artifacts_with_digests() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Outputs::new(dir.path()).unwrap();
        out.write("b.txt", b"abc").unwrap();
        out.write("a/x.bin", b"").unwrap();
        out.record_seed("study", 3);
        let m = out.finish("test", 3, serde_json::json!({})).unwrap();
        let paths: Vec<&str> = m.artifacts.iter().map(|a| a.path.as_str()).collect();
        assert_eq!(paths, ["a/x.bin", "b.txt"]);
        assert_eq!(m.artifacts[1].sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(m.artifacts[0].sha256, "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
        let on_disk: Manifest = serde_json::from_slice(&std::fs::read(dir.path().join(MANIFEST_NAME)).unwrap()).unwrap();
        assert_eq!(on_disk, m);
    }
}
