use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use evcast_core::eval::{
    fit, run_experiment_with, EvalReport, ExperimentConfig, ExperimentData, Fitted,
};
use evcast_core::exec;
use evcast_core::ingest::{aggregate_daily, build_registry, parse_transactions, DemandPanel, StationRegistry};
use evcast_core::models::{ArModel, ModelKind, VarModel};
use evcast_core::numerics::ParameterStore;
use evcast_core::topology::{
    build_graph, build_raster, normalize_adjacency, read_dense_csv, write_dense_csv, NormalizedAdjacency,
    RasterSeries,
};
use evcast_core::training::ScalingTransform;

use crate::config::{hash_values, hex, PipelineConfig};
use crate::error::CliError;
use crate::plot;
use crate::workspace::{StageRecord, Workspace, EVALUATE, INGEST, TOPOLOGY};

const PANEL: &str = "ingest/panel.csv";
const STATIONS: &str = "ingest/stations.csv";
const DIAGNOSTICS: &str = "ingest/diagnostics.log";
const EDGES: &str = "topology/edges.csv";
const ADJACENCY: &str = "topology/adjacency.csv";
const RASTER: &str = "topology/raster.csv";
const SUMMARY: &str = "topology/summary.txt";
const REPORT_CSV: &str = "reports/report.csv";
const REPORT_TXT: &str = "reports/report.txt";

pub struct Context {
    pub config: PipelineConfig,
    pub workspace: Workspace,
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> evcast_core::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

impl Context {
    fn ingest_settings(&self) -> String {
        hash_values(&[json!(self.config.schema), json!(self.config.ingest)])
    }

    fn topology_settings(&self, ingest: &StageRecord) -> String {
        hash_values(&[json!(ingest.hash), json!(self.config.topology)])
    }

    pub fn ingest(&self, input: Option<&Path>) -> Result<(), CliError> {
        let raw: PathBuf = input
            .map(Path::to_path_buf)
            .or_else(|| self.config.paths.raw_data.clone())
            .ok_or_else(|| CliError::Config("no raw data path: pass --input or set paths.raw_data".into()))?;
        let bytes = std::fs::read(&raw).map_err(|e| CliError::io(&raw, e))?;
        let parsed = parse_transactions(bytes.as_slice(), &self.config.schema)?;
        let registry = build_registry(&parsed.transactions)?;
        if parsed.transactions.is_empty() {
            return Err(CliError::Core(evcast_core::Error::InvalidInput(format!(
                "{}: no valid transactions ({} rows rejected)",
                raw.display(),
                parsed.rejected.len()
            ))));
        }
        let dates = parsed.transactions.iter().map(|t| t.start_time.date());
        let from = self.config.ingest.date_from.unwrap_or_else(|| dates.clone().min().expect("nonempty"));
        let to = self.config.ingest.date_to.unwrap_or_else(|| dates.max().expect("nonempty"));
        let agg = aggregate_daily(&parsed.transactions, &registry.registry, from, to)?;

        let ws = &self.workspace;
        ws.write(&ws.path(PANEL), &csv_bytes(|b| agg.panel.write_csv(b))?)?;
        ws.write(&ws.path(STATIONS), &csv_bytes(|b| registry.registry.write_csv(b))?)?;
        let mut log = format!(
            "accepted rows: {}\nrejected rows: {}\noutside date range: {}\n",
            parsed.transactions.len(),
            parsed.rejected.len(),
            agg.out_of_range
        );
        for r in &parsed.rejected {
            log.push_str(&format!("rejected: {r}\n"));
        }
        for d in &registry.diagnostics {
            log.push_str(&format!("station: {d}\n"));
        }
        ws.write(&ws.path(DIAGNOSTICS), log.as_bytes())?;

        let settings = self.ingest_settings();
        let content = hex(&Sha256::digest(&bytes)[..8]);
        ws.record(
            INGEST,
            StageRecord {
                hash: hash_values(&[json!(settings), json!(content)]),
                settings_hash: settings,
                artifacts: vec![PANEL.into(), STATIONS.into(), DIAGNOSTICS.into()],
            },
        )?;
        info!(
            "ingest: {} rows accepted, {} rejected; panel {} days ({} to {}) × {} stations",
            parsed.transactions.len(),
            parsed.rejected.len(),
            agg.panel.n_days(),
            agg.panel.start_date(),
            agg.panel.end_date(),
            agg.panel.n_stations()
        );
        for r in &parsed.rejected {
            warn!("rejected row {r}");
        }
        Ok(())
    }

    fn load_ingest(&self) -> Result<(StageRecord, StationRegistry, DemandPanel), CliError> {
        let rec = self.workspace.require(INGEST, &self.ingest_settings(), "ingest")?;
        let ws = &self.workspace;
        let registry = StationRegistry::read_csv(ws.read(&ws.path(STATIONS))?.as_bytes())?;
        let panel = DemandPanel::read_csv(ws.read(&ws.path(PANEL))?.as_bytes())?;
        Ok((rec, registry, panel))
    }

    pub fn topology(&self) -> Result<(), CliError> {
        let (ingest, registry, panel) = self.load_ingest()?;
        let t = &self.config.topology;
        let graph = build_graph(&registry, t.cutoff_km)?;
        let norm = normalize_adjacency(&graph);
        let raster = build_raster(&registry, &panel, t.grid_rows, t.grid_cols)?;
        let ws = &self.workspace;
        ws.write(&ws.path(EDGES), &csv_bytes(|b| graph.write_edge_list(b))?)?;
        ws.write(&ws.path(ADJACENCY), &csv_bytes(|b| write_dense_csv(norm.matrix(), b))?)?;
        ws.write(&ws.path(RASTER), &csv_bytes(|b| raster.write_csv(b))?)?;
        let isolated: Vec<&str> = graph
            .isolated_nodes()
            .into_iter()
            .map(|i| registry.stations()[i].station_id.as_str())
            .collect();
        let summary = format!(
            "stations: {}\nedges: {}\nisolated: {}\nisolated stations: {}\ngrid: {}x{}\ncutoff_km: {}\n",
            graph.n_nodes(),
            graph.edges().len(),
            isolated.len(),
            isolated.join(" "),
            t.grid_rows,
            t.grid_cols,
            t.cutoff_km
        );
        ws.write(&ws.path(SUMMARY), summary.as_bytes())?;
        let settings = self.topology_settings(&ingest);
        ws.record(
            TOPOLOGY,
            StageRecord {
                hash: settings.clone(),
                settings_hash: settings,
                artifacts: vec![EDGES.into(), ADJACENCY.into(), RASTER.into(), SUMMARY.into()],
            },
        )?;
        info!(
            "topology: {} stations, {} edges, {} isolated; raster {}x{} over {} days",
            graph.n_nodes(),
            graph.edges().len(),
            isolated.len(),
            t.grid_rows,
            t.grid_cols,
            raster.n_days()
        );
        Ok(())
    }

    fn load_data(&self) -> Result<(String, ExperimentData), CliError> {
        let (ingest, _, panel) = self.load_ingest()?;
        let topo = self.workspace.require(TOPOLOGY, &self.topology_settings(&ingest), "topology")?;
        let ws = &self.workspace;
        let adjacency = NormalizedAdjacency::from_matrix(read_dense_csv(ws.read(&ws.path(ADJACENCY))?.as_bytes())?)?;
        let raster = RasterSeries::read_csv(ws.read(&ws.path(RASTER))?.as_bytes())?;
        Ok((topo.hash, ExperimentData::new(panel, adjacency, raster)?))
    }

    fn checkpoint_hash(&self, topology: &str, kind: ModelKind, horizon: usize, seed: Option<u64>) -> String {
        let c = &self.config;
        hash_values(&[
            json!(topology),
            json!(kind),
            json!(horizon),
            json!(seed),
            json!(c.windows),
            json!(c.model),
            json!(train_hyper(c)),
            json!(c.evaluate.split_date),
        ])
    }

    fn slot(kind: ModelKind, seed: u64) -> Option<u64> {
        kind.is_stochastic().then_some(seed)
    }

    fn train_one(
        &self,
        data: &ExperimentData,
        exp: &ExperimentConfig,
        topology: &str,
        kind: ModelKind,
        horizon: usize,
        seed: u64,
    ) -> Result<(), CliError> {
        let slot = Self::slot(kind, seed);
        let fitted = fit(data, exp, kind, horizon, seed)?;
        let dir = self.workspace.checkpoint_dir(kind, horizon, slot);
        let (store, scaler) = match &fitted {
            Fitted::Ar(m) => (m.to_store()?, None),
            Fitted::Var(m) => (m.to_store()?, None),
            Fitted::Persistence => (ParameterStore::new(), None),
            Fitted::Neural { params, scaler, .. } => (params.clone(), Some(scaler.clone())),
        };
        let manifest = CheckpointManifest {
            model: kind,
            horizon,
            seed: slot,
            lookback: exp.window_spec(horizon)?.lookback,
            topology_hash: topology.to_string(),
            config_hash: self.checkpoint_hash(topology, kind, horizon, slot),
            hyperparameters: json!({
                "windows": self.config.windows,
                "model": self.config.model,
                "train": train_hyper(&self.config),
                "split_date": self.config.evaluate.split_date,
            }),
            scaler,
        };
        let ws = &self.workspace;
        ws.write(&dir.join("checkpoint.csv"), store.to_checkpoint().as_bytes())?;
        ws.write(
            &dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest).expect("manifest serializes").as_bytes(),
        )?;
        if let Some(trace) = fitted.loss_trace() {
            let mut csv = String::from("epoch,loss\n");
            for (i, l) in trace.iter().enumerate() {
                csv.push_str(&format!("{},{l}\n", i + 1));
            }
            ws.write(&dir.join("loss_trace.csv"), csv.as_bytes())?;
            info!(
                "train: {kind} h={horizon} seed={seed}: loss {:.6} → {:.6} over {} epochs",
                trace[0],
                trace[trace.len() - 1],
                trace.len()
            );
        } else {
            info!("train: {kind} h={horizon} fitted");
        }
        Ok(())
    }

    fn train_jobs(
        &self,
        data: &ExperimentData,
        exp: &ExperimentConfig,
        topology: &str,
        jobs: &[(ModelKind, usize, u64)],
    ) -> Result<(), CliError> {
        exec::try_map(exp.execution, jobs, |&(k, h, s)| self.train_one(data, exp, topology, k, h, s))?;
        Ok(())
    }

    /// Trains `models × horizons × seeds` (one fit for deterministic models).
    pub fn train(&self, models: &[ModelKind], horizons: &[usize]) -> Result<(), CliError> {
        let (topology, data) = self.load_data()?;
        let exp = self.config.experiment();
        let jobs = self.grid(models, horizons);
        self.train_jobs(&data, &exp, &topology, &jobs)
    }

    fn grid(&self, models: &[ModelKind], horizons: &[usize]) -> Vec<(ModelKind, usize, u64)> {
        let mut jobs = Vec::new();
        for &k in models {
            for &h in horizons {
                if k.is_stochastic() {
                    jobs.extend(self.config.evaluate.seeds.iter().map(|&s| (k, h, s)));
                } else {
                    jobs.push((k, h, self.config.evaluate.seeds[0]));
                }
            }
        }
        jobs
    }

    fn checkpoint_state(&self, topology: &str, kind: ModelKind, horizon: usize, seed: u64) -> Option<String> {
        let slot = Self::slot(kind, seed);
        let dir = self.workspace.checkpoint_dir(kind, horizon, slot);
        let text = match std::fs::read_to_string(dir.join("manifest.json")) {
            Ok(t) => t,
            Err(_) => return Some(format!("{} (missing)", dir.display())),
        };
        match serde_json::from_str::<CheckpointManifest>(&text) {
            Ok(m) if m.config_hash == self.checkpoint_hash(topology, kind, horizon, slot) => {
                if dir.join("checkpoint.csv").exists() {
                    None
                } else {
                    Some(format!("{} (no checkpoint.csv)", dir.display()))
                }
            }
            Ok(_) => Some(format!("{} (stale: trained with different settings)", dir.display())),
            Err(_) => Some(format!("{} (unreadable manifest)", dir.display())),
        }
    }

    fn load_fitted(&self, kind: ModelKind, horizon: usize, seed: u64) -> evcast_core::Result<Fitted> {
        use evcast_core::Error;
        if kind == ModelKind::Persistence {
            return Ok(Fitted::Persistence);
        }
        let dir = self.workspace.checkpoint_dir(kind, horizon, Self::slot(kind, seed));
        let read = |name: &str| {
            std::fs::read_to_string(dir.join(name))
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", dir.join(name).display())))
        };
        let manifest: CheckpointManifest = serde_json::from_str(&read("manifest.json")?)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", dir.display())))?;
        let store = ParameterStore::from_checkpoint(&read("checkpoint.csv")?)?;
        Ok(match kind {
            ModelKind::Ar => Fitted::Ar(ArModel::from_store(&store)?),
            ModelKind::Var => Fitted::Var(VarModel::from_store(&store)?),
            _ => Fitted::Neural {
                params: store,
                scaler: manifest
                    .scaler
                    .ok_or_else(|| Error::Checkpoint(format!("{}: manifest lacks a scaler", dir.display())))?,
                loss_trace: Vec::new(),
            },
        })
    }

    /// Scores the configured grid from checkpoints, training missing ones
    /// first when `train_missing` is set.
    pub fn evaluate(&self, train_missing: bool) -> Result<EvalReport, CliError> {
        let (topology, data) = self.load_data()?;
        let exp = self.config.experiment();
        let needed: Vec<_> = self
            .grid(&exp.models, &exp.horizons)
            .into_iter()
            .filter(|(k, _, _)| *k != ModelKind::Persistence)
            .collect();
        let missing: Vec<_> = needed
            .iter()
            .filter_map(|&(k, h, s)| self.checkpoint_state(&topology, k, h, s).map(|why| ((k, h, s), why)))
            .collect();
        if !missing.is_empty() {
            if !train_missing {
                let list: Vec<String> = missing.iter().map(|(_, why)| format!("  {why}")).collect();
                return Err(CliError::MissingArtifact(format!(
                    "{} checkpoint(s) unavailable; run `evcast train` or pass --train-missing:\n{}",
                    missing.len(),
                    list.join("\n")
                )));
            }
            let jobs: Vec<_> = missing.iter().map(|(j, _)| *j).collect();
            info!("evaluate: training {} missing checkpoint(s)", jobs.len());
            self.train_jobs(&data, &exp, &topology, &jobs)?;
        }

        let report = run_experiment_with(&data, &exp, |_, _, kind, horizon, seed| {
            self.load_fitted(kind, horizon, seed)
        })?;
        let ws = &self.workspace;
        let mut artifacts = vec![REPORT_CSV.to_string(), REPORT_TXT.to_string()];
        ws.write(&ws.path(REPORT_CSV), report.to_csv().as_bytes())?;
        ws.write(&ws.path(REPORT_TXT), report.to_table().as_bytes())?;
        for &h in &report.horizons {
            let name = forecasts_name(h);
            ws.write(&ws.path(&name), report.traces_csv(h)?.as_bytes())?;
            artifacts.push(name);
        }
        ws.record(
            EVALUATE,
            StageRecord {
                hash: report.fingerprint.clone(),
                settings_hash: report.fingerprint.clone(),
                artifacts,
            },
        )?;
        Ok(report)
    }

    pub fn plot(&self, horizon: usize, models: Option<&[ModelKind]>) -> Result<PathBuf, CliError> {
        let ws = &self.workspace;
        let source = ws.path(&forecasts_name(horizon));
        if !source.exists() {
            return Err(CliError::MissingArtifact(format!(
                "{} does not exist; run `evcast evaluate` with horizon {horizon} first",
                source.display()
            )));
        }
        let table = plot::ForecastTable::parse(&ws.read(&source)?)?;
        let table = match models {
            Some(m) => {
                let labels: Vec<String> = m.iter().map(|k| k.label(self.label_order(*k))).collect();
                table.select(&labels)?
            }
            None => table,
        };
        if table.dates.is_empty() {
            return Err(CliError::Core(evcast_core::Error::InvalidInput(
                "empty test period: nothing to plot".into(),
            )));
        }
        let stem = match models {
            Some([one]) => format!("reports/plot_h{horizon}_{one}"),
            _ => format!("reports/plot_h{horizon}"),
        };
        let svg = ws.path(&format!("{stem}.svg"));
        ws.write(&ws.path(&format!("{stem}.csv")), table.to_csv().as_bytes())?;
        ws.write(&svg, plot::render_svg(&table, horizon).as_bytes())?;
        info!("plot: {} ({} days, {} series)", svg.display(), table.dates.len(), table.series.len());
        Ok(svg)
    }

    fn label_order(&self, kind: ModelKind) -> usize {
        if kind == ModelKind::Var {
            self.config.model.var_order
        } else {
            self.config.model.ar_order
        }
    }
}

pub fn forecasts_name(horizon: usize) -> String {
    format!("reports/forecasts_h{horizon}.csv")
}

fn train_hyper(c: &PipelineConfig) -> serde_json::Value {
    json!({
        "epochs": c.train.epochs,
        "lambda": c.train.lambda,
        "learning_rate": c.train.learning_rate,
        "chunk_size": c.train.chunk_size,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointManifest {
    model: ModelKind,
    horizon: usize,
    seed: Option<u64>,
    lookback: usize,
    topology_hash: String,
    config_hash: String,
    hyperparameters: serde_json::Value,
    scaler: Option<ScalingTransform>,
}
