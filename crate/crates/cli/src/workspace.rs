use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use evcast_core::models::ModelKind;

use crate::error::CliError;

pub const INGEST: &str = "ingest";
pub const TOPOLOGY: &str = "topology";
pub const EVALUATE: &str = "evaluate";

/// What a stage was built from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Identifies the artifacts' content lineage; downstream stages fold it
    /// into their own hash.
    pub hash: String,
    /// Hash of the config settings alone, compared against the current
    /// config to detect stale artifacts.
    pub settings_hash: String,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    fn manifest_path(&self) -> PathBuf {
        self.path("manifest.json")
    }

    pub fn manifest(&self) -> Result<Manifest, CliError> {
        let p = self.manifest_path();
        if !p.exists() {
            return Ok(Manifest::default());
        }
        let text = fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::MissingArtifact(format!("unreadable manifest {}: {e}", p.display())))
    }

    pub fn record(&self, stage: &str, record: StageRecord) -> Result<(), CliError> {
        let mut m = self.manifest()?;
        m.stages.insert(stage.to_string(), record);
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        self.write(&self.manifest_path(), text.as_bytes())
    }

    /// The stage record, provided it exists and matches `settings_hash`.
    pub fn require(&self, stage: &str, settings_hash: &str, rerun: &str) -> Result<StageRecord, CliError> {
        let m = self.manifest()?;
        let Some(rec) = m.stages.get(stage) else {
            return Err(CliError::MissingArtifact(format!(
                "stage '{stage}' has not been run in {}; run `evcast {rerun}` first",
                self.root.display()
            )));
        };
        if rec.settings_hash != settings_hash {
            return Err(CliError::MissingArtifact(format!(
                "stage '{stage}' artifacts were built with different settings; rerun `evcast {rerun}`"
            )));
        }
        for a in &rec.artifacts {
            if !self.path(a).exists() {
                return Err(CliError::MissingArtifact(format!(
                    "stage '{stage}' artifact {} is missing; rerun `evcast {rerun}`",
                    self.path(a).display()
                )));
            }
        }
        Ok(rec.clone())
    }

    pub fn write(&self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        fs::write(path, bytes).map_err(|e| CliError::io(path, e))
    }

    pub fn read(&self, path: &Path) -> Result<String, CliError> {
        if !path.exists() {
            return Err(CliError::MissingArtifact(format!("{} does not exist", path.display())));
        }
        fs::read_to_string(path).map_err(|e| CliError::io(path, e))
    }

    pub fn checkpoint_dir(&self, kind: ModelKind, horizon: usize, seed: Option<u64>) -> PathBuf {
        let name = match seed {
            Some(s) => format!("{kind}_h{horizon}_seed{s}"),
            None => format!("{kind}_h{horizon}"),
        };
        self.path("models").join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn require_detects_missing_and_stale() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path());
        assert!(matches!(ws.require(INGEST, "a", "ingest"), Err(CliError::MissingArtifact(_))));
        ws.write(&ws.path("ingest/panel.csv"), b"x").unwrap();
        ws.record(
            INGEST,
            StageRecord {
                hash: "h".into(),
                settings_hash: "a".into(),
                artifacts: vec!["ingest/panel.csv".into()],
            },
        )
        .unwrap();
        assert!(ws.require(INGEST, "a", "ingest").is_ok());
        let stale = ws.require(INGEST, "b", "ingest").unwrap_err().to_string();
        assert!(stale.contains("different settings"), "{stale}");
        fs::remove_file(ws.path("ingest/panel.csv")).unwrap();
        assert!(ws.require(INGEST, "a", "ingest").is_err());
    }
}
