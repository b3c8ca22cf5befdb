//! Atomic artifact writing and the run manifest.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliResult;

pub const MANIFEST: &str = "manifest.json";

/// Files are written into a hidden temporary directory next to their final
/// place and renamed into the output directory on [`Staging::commit`].
pub struct Staging {
    out: PathBuf,
    tmp: tempfile::TempDir,
    files: Vec<String>,
}

impl Staging {
    pub fn new(out: &Path) -> CliResult<Self> {
        fs::create_dir_all(out)?;
        let tmp = tempfile::Builder::new().prefix(".staging-").tempdir_in(out)?;
        Ok(Staging { out: out.to_path_buf(), tmp, files: Vec::new() })
    }

    /// Path to write `name` to; the file is registered as an output.
    pub fn path(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.tmp.path().join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let p = self.path(name);
        fs::write(p, bytes)?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Moves every staged file into place (one rename each) and returns their
    /// hashes, in staging order.
    pub fn commit(self) -> CliResult<Vec<FileEntry>> {
        let mut entries = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let src = self.tmp.path().join(name);
            entries.push(FileEntry { path: name.clone(), sha256: sha256_file(&src)? });
            fs::rename(&src, self.out.join(name))?;
        }
        Ok(entries)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub task: String,
    pub seed: u64,
    /// Hash of the experiment file as given.
    pub spec_sha256: String,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut f = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Writes `manifest.json` atomically.
pub fn write_manifest(out: &Path, manifest: &Manifest) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    let mut tmp = tempfile::NamedTempFile::new_in(out)?;
    std::io::Write::write_all(&mut tmp, text.as_bytes())?;
    tmp.persist(out.join(MANIFEST)).map_err(|e| e.error)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> CliResult<Manifest> {
    let p = dir.join(MANIFEST);
    let text = fs::read_to_string(&p)
        .map_err(|e| crate::error::CliError::task(format!("cannot read {}: {e}", p.display())))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn staged_files_appear_only_on_commit() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Staging::new(dir.path()).unwrap();
        s.write("a.csv", b"x,y\n1,2\n").unwrap();
        assert!(!dir.path().join("a.csv").exists());
        let entries = s.commit().unwrap();
        assert_eq!(fs::read(dir.path().join("a.csv")).unwrap(), b"x,y\n1,2\n");
        assert_eq!(entries[0].sha256, sha256_bytes(b"x,y\n1,2\n"));
        // the staging directory is gone
        let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn known_digest() {
        assert_eq!(sha256_bytes(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
