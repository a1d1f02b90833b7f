//! Where each command reads and writes under the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn phantoms(&self) -> PathBuf {
        self.root.join("phantoms")
    }

    pub fn fields(&self) -> PathBuf {
        self.root.join("fields")
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("model")
    }

    pub fn maps(&self) -> PathBuf {
        self.root.join("maps")
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn spec(&self, case: &str) -> PathBuf {
        self.phantoms().join(format!("{case}.json"))
    }

    pub fn phantom_map(&self, case: &str) -> PathBuf {
        self.phantoms().join(format!("{case}.mu.mreg"))
    }

    pub fn displacement(&self, case: &str) -> PathBuf {
        self.fields().join(format!("{case}.u.mreg"))
    }

    pub fn ground_truth(&self, case: &str) -> PathBuf {
        self.fields().join(format!("{case}.gt.mreg"))
    }

    pub fn stiffness_map(&self, case: &str, method: &str) -> PathBuf {
        self.maps().join(format!("{case}.{method}.mreg"))
    }

    pub fn manifest(&self) -> PathBuf {
        self.dataset().join("manifest.json")
    }

    pub fn patches(&self, split: &str) -> PathBuf {
        self.dataset().join(format!("{split}.patches"))
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.model().join("model.dimc")
    }

    pub fn history(&self) -> PathBuf {
        self.model().join("history.csv")
    }

    pub fn report_csv(&self) -> PathBuf {
        self.eval().join("report.csv")
    }
}

/// Case id of a file named `<case>.<suffix>`.
pub fn case_id(path: &Path, suffix: &str) -> Result<String> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    name.strip_suffix(suffix)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .ok_or_else(|| CliError::validation(format!("{} is not a `*{suffix}` file", path.display())))
}

/// Files in `dir` ending in `suffix`, sorted by name.
pub fn list(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(suffix)) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

/// Provenance record written next to every artifact as `<file>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
}

impl Provenance {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            command: command.into(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Writes `path` and its provenance sidecar.
pub fn write_artifact(path: &Path, bytes: impl AsRef<[u8]>, prov: &Provenance) -> Result<()> {
    write(path, bytes)?;
    write(&meta_path(path), serde_json::to_string_pretty(prov)?)
}
