//! Run manifests: what produced an output directory, and hashes of everything in it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, read_vocab, sha256_file, vocab_hash, write_json};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const TOOL_VERSION: &str = concat!("dsft ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub vocab_hash: Option<String>,
    pub corpus_fingerprint: Option<String>,
    /// Input files by role, as absolute paths.
    pub inputs: BTreeMap<String, String>,
    pub artifacts: Vec<Artifact>,
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(Error::io(dir))? {
        let path = entry.map_err(Error::io(dir))?.path();
        if path.is_dir() {
            walk(root, &path, out)?;
        } else if path != root.join(MANIFEST_FILE) {
            out.push(path);
        }
    }
    Ok(())
}

/// Hash every file under `dir` except the manifest itself, sorted by path.
pub fn hash_artifacts(dir: &Path) -> Result<Vec<Artifact>> {
    let mut files = Vec::new();
    walk(dir, dir, &mut files)?;
    let mut out: Vec<Artifact> = files
        .iter()
        .map(|p| {
            let rel = p.strip_prefix(dir).expect("walk stays under dir");
            let path = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            Ok(Artifact { path, sha256: sha256_file(p)? })
        })
        .collect::<Result<_>>()?;
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

pub fn absolute(path: &Path) -> String {
    fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf()).display().to_string()
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: BTreeMap<String, String>) -> Self {
        RunManifest {
            tool_version: TOOL_VERSION.into(),
            command: command.into(),
            seed,
            config,
            vocab_hash: None,
            corpus_fingerprint: None,
            inputs: BTreeMap::new(),
            artifacts: Vec::new(),
        }
    }

    /// Hash the directory contents and write `manifest.json`.
    pub fn seal(mut self, dir: &Path) -> Result<Self> {
        self.artifacts = hash_artifacts(dir)?;
        write_json(&dir.join(MANIFEST_FILE), &self)?;
        Ok(self)
    }

    /// Read `dir/manifest.json` and recompute every recorded hash.
    pub fn read_verified(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.is_file() {
            return Err(Error::Usage(format!("{} has no {MANIFEST_FILE}", dir.display())));
        }
        let m: RunManifest = read_json(&path)?;
        for a in &m.artifacts {
            let p = dir.join(&a.path);
            let actual = sha256_file(&p).map_err(|_| Error::Integrity(format!("{} is missing", p.display())))?;
            if actual != a.sha256 {
                return Err(Error::Integrity(format!("{} changed since the manifest was written", p.display())));
            }
        }
        if let Some(expected) = &m.vocab_hash {
            let vp = dir.join(VOCAB_FILE);
            if vp.is_file() && &vocab_hash(&read_vocab(&vp)?) != expected {
                return Err(Error::Integrity(format!("{} does not match the manifest vocab hash", vp.display())));
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seal_and_verify() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("b.txt"), "b").unwrap();
        fs::write(dir.path().join("sub/a.txt"), "a").unwrap();
        let m = RunManifest::new("test", 1, BTreeMap::new()).seal(dir.path()).unwrap();
        let paths: Vec<&str> = m.artifacts.iter().map(|a| a.path.as_str()).collect();
        assert_eq!(paths, ["b.txt", "sub/a.txt"]);
        assert_eq!(RunManifest::read_verified(dir.path()).unwrap(), m);

        fs::write(dir.path().join("sub/a.txt"), "changed").unwrap();
        assert!(matches!(RunManifest::read_verified(dir.path()), Err(Error::Integrity(_))));
        fs::remove_file(dir.path().join("sub/a.txt")).unwrap();
        assert!(matches!(RunManifest::read_verified(dir.path()), Err(Error::Integrity(_))));
    }
}
