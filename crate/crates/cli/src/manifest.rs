use std::cell::Cell;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use vcmlab::eval::RDPoint;
use vcmlab::{Error, Result};

pub const MANIFEST: &str = "manifest.json";

/// Record of one command run. Written once, after every file it lists.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub experiment_id: String,
    pub command: String,
    pub tool_version: String,
    pub config: serde_json::Value,
    pub dataset_fingerprint: Option<String>,
    /// Paths relative to the run directory.
    pub checkpoints: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub rd_points: Vec<RDPoint>,
}

/// Output directory of one command. Reruns get `-2`, `-3`, ... suffixes
/// instead of touching an earlier run. Dropped unsealed, the directory is
/// removed again, so failed commands leave nothing behind.
pub struct RunDir {
    pub id: String,
    pub path: PathBuf,
    sealed: Cell<bool>,
}

impl Drop for RunDir {
    fn drop(&mut self) {
        if !self.sealed.get() {
            let _ = std::fs::remove_dir_all(&self.path);
        }
    }
}

impl RunDir {
    pub fn create(root: &Path, name: &str) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| io(root, e))?;
        for n in 1.. {
            let id = if n == 1 { name.to_string() } else { format!("{name}-{n}") };
            let path = root.join(&id);
            match std::fs::create_dir(&path) {
                Ok(()) => {
                    return Ok(Self {
                        id,
                        path,
                        sealed: Cell::new(false),
                    })
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(io(&path, e)),
            }
        }
        unreachable!()
    }

    pub fn relative(&self, p: &Path) -> PathBuf {
        p.strip_prefix(&self.path).unwrap_or(p).to_path_buf()
    }

    pub fn seal(&self, manifest: &ExperimentManifest) -> Result<PathBuf> {
        for p in manifest.checkpoints.iter().chain(&manifest.outputs) {
            let full = self.path.join(p);
            if !full.is_file() {
                return Err(Error::Config(format!("manifest references missing file {}", full.display())));
            }
        }
        let path = self.path.join(MANIFEST);
        let text = serde_json::to_string_pretty(manifest).expect("manifest serializes") + "\n";
        let mut f = std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| io(&path, e))?;
        std::io::Write::write_all(&mut f, text.as_bytes()).map_err(|e| io(&path, e))?;
        self.sealed.set(true);
        Ok(path)
    }
}

pub fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty(id: &str) -> ExperimentManifest {
        ExperimentManifest {
            experiment_id: id.into(),
            command: "test".into(),
            tool_version: "0".into(),
            config: serde_json::Value::Null,
            dataset_fingerprint: None,
            checkpoints: Vec::new(),
            outputs: vec!["out.txt".into()],
            rd_points: Vec::new(),
        }
    }

    #[test]
    fn suffixes_and_cleanup() {
        let root = tempfile::tempdir().unwrap();
        let a = RunDir::create(root.path(), "run").unwrap();
        std::fs::write(a.path.join("out.txt"), "x").unwrap();
        a.seal(&empty(&a.id)).unwrap();
        let b = RunDir::create(root.path(), "run").unwrap();
        assert_eq!(b.id, "run-2");
        // listed output missing: sealing fails and the directory goes away
        assert!(b.seal(&empty(&b.id)).is_err());
        let path = b.path.clone();
        drop(b);
        assert!(!path.exists());
        drop(a);
        assert!(root.path().join("run/manifest.json").is_file());
    }
}
