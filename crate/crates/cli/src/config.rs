use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use evcast_core::eval::ExperimentConfig;
use evcast_core::exec::Execution;
use evcast_core::ingest::ColumnSchema;
use evcast_core::models::gcn::GcnShape;
use evcast_core::models::ModelKind;
use evcast_core::training::TrainConfig;

use crate::error::CliError;

/// Environment variable consulted for the workspace when neither the
/// command line nor the config file names one.
pub const WORKSPACE_ENV: &str = "EVCAST_WORKSPACE";
pub const DEFAULT_WORKSPACE: &str = "evcast-workspace";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub schema: ColumnSchema,
    pub ingest: IngestSection,
    pub topology: TopologySection,
    pub windows: WindowsSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub evaluate: EvaluateSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub raw_data: Option<PathBuf>,
    pub workspace: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    /// Inclusive day range of the panel; defaults to the span of the data.
    pub date_from: Option<NaiveDate>,
    pub date_to: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySection {
    pub cutoff_km: f64,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

impl Default for TopologySection {
    fn default() -> Self {
        Self {
            cutoff_km: evcast_core::topology::DEFAULT_CUTOFF_KM,
            grid_rows: 5,
            grid_cols: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowsSection {
    pub short_lookback: usize,
    pub long_lookback: usize,
    /// Horizons at or above this use `long_lookback`.
    pub long_horizon: usize,
}

impl Default for WindowsSection {
    fn default() -> Self {
        Self {
            short_lookback: 30,
            long_lookback: 120,
            long_horizon: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub gcn_hidden: usize,
    pub gcn_out: usize,
    pub lstm_hidden: usize,
    pub cnn_filters: usize,
    pub cnn_kernel: usize,
    pub ar_order: usize,
    pub var_order: usize,
    pub ar_jitter: f64,
    pub var_jitter: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            gcn_hidden: e.gcn.hidden,
            gcn_out: e.gcn.out_features,
            lstm_hidden: e.lstm_hidden,
            cnn_filters: e.cnn_filters,
            cnn_kernel: e.cnn_kernel,
            ar_order: e.ar_order,
            var_order: e.var_order,
            ar_jitter: e.ar_jitter,
            var_jitter: e.var_jitter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub chunk_size: usize,
    pub execution: Execution,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            lambda: t.lambda,
            learning_rate: t.learning_rate,
            chunk_size: t.chunk_size,
            execution: Execution::available(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub models: Vec<ModelKind>,
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
    /// First test day; training uses the days before it.
    pub split_date: NaiveDate,
    /// Last test day, inclusive.
    pub test_end: Option<NaiveDate>,
    pub include_persistence: bool,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            models: e.models,
            horizons: e.horizons,
            seeds: e.seeds,
            split_date: e.split_date,
            test_end: e.test_end,
            include_persistence: false,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.topology.cutoff_km > 0.0) {
            return bad(format!("topology.cutoff_km must be > 0, got {}", self.topology.cutoff_km));
        }
        if self.topology.grid_rows == 0 || self.topology.grid_cols == 0 {
            return bad("topology grid dimensions must be ≥ 1".into());
        }
        if self.train.epochs == 0 {
            return bad("train.epochs must be ≥ 1".into());
        }
        if !(self.train.lambda >= 0.0) {
            return bad(format!("train.lambda must be ≥ 0, got {}", self.train.lambda));
        }
        if self.evaluate.horizons.is_empty() || self.evaluate.horizons.contains(&0) {
            return bad("evaluate.horizons must be nonempty and ≥ 1".into());
        }
        if self.evaluate.seeds.is_empty() || self.evaluate.models.is_empty() {
            return bad("evaluate.seeds and evaluate.models must be nonempty".into());
        }
        if let (Some(a), Some(b)) = (self.ingest.date_from, self.ingest.date_to) {
            if a > b {
                return bad(format!("ingest.date_from {a} is after ingest.date_to {b}"));
            }
        }
        Ok(())
    }

    /// Flag, then config file, then environment, then the default.
    pub fn resolve_workspace(&self, flag: Option<&Path>, env: Option<&str>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.paths.workspace.clone())
            .or_else(|| env.filter(|v| !v.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_WORKSPACE))
    }

    pub fn models(&self) -> Vec<ModelKind> {
        let mut models = self.evaluate.models.clone();
        if self.evaluate.include_persistence && !models.contains(&ModelKind::Persistence) {
            models.push(ModelKind::Persistence);
        }
        models
    }

    pub fn experiment(&self) -> ExperimentConfig {
        let m = &self.model;
        ExperimentConfig {
            models: self.models(),
            horizons: self.evaluate.horizons.clone(),
            seeds: self.evaluate.seeds.clone(),
            short_lookback: self.windows.short_lookback,
            long_lookback: self.windows.long_lookback,
            long_horizon: self.windows.long_horizon,
            train: TrainConfig {
                epochs: self.train.epochs,
                lambda: self.train.lambda,
                learning_rate: self.train.learning_rate,
                seed: 0,
                chunk_size: self.train.chunk_size,
                execution: self.train.execution,
            },
            split_date: self.evaluate.split_date,
            test_end: self.evaluate.test_end,
            ar_order: m.ar_order,
            var_order: m.var_order,
            ar_jitter: m.ar_jitter,
            var_jitter: m.var_jitter,
            cnn_filters: m.cnn_filters,
            cnn_kernel: m.cnn_kernel,
            lstm_hidden: m.lstm_hidden,
            gcn: GcnShape {
                in_features: 1,
                hidden: m.gcn_hidden,
                out_features: m.gcn_out,
            },
            execution: self.train.execution,
        }
    }
}

/// Short hex SHA-256 over the JSON encodings of `parts`.
pub fn hash_values(parts: &[serde_json::Value]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.to_string().as_bytes());
        h.update([0u8]);
    }
    hex(&h.finalize()[..8])
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn default_toml() -> String {
    toml::to_string(&PipelineConfig::default()).expect("default config serializes")
}
