//! Per-stage manifests: which config, seed and exact input files produced
//! which outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::io::{read_json, sha256_file, write_json};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

/// Path relative to `root` when it lies below it, otherwise as given.
pub fn display_path(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

pub fn hash_files(root: &Path, files: &[PathBuf]) -> Result<Vec<FileHash>> {
    files
        .iter()
        .map(|f| {
            Ok(FileHash {
                path: display_path(root, f),
                sha256: sha256_file(f)?,
            })
        })
        .collect()
}

/// Every file below `dir` except the manifest, sorted.
pub fn list_outputs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| PipelineError::io(&d, e))? {
            let path = entry.map_err(|e| PipelineError::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != MANIFEST_FILE) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Option<Self>> {
        if path.exists() {
            read_json(path).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// True when every recorded output still exists with its hash.
    pub fn outputs_intact(&self, root: &Path) -> bool {
        self.outputs
            .iter()
            .all(|f| sha256_file(&root.join(&f.path)).is_ok_and(|h| h == f.sha256))
    }
}
