//! Total-system scoring and the multi-seed experiment grid.
//!
//! Every model is trained once on the days before the split date and then
//! applied, without retraining, at every window whose targets fall in the
//! test period. Forecasts are summed over stations or cells and scored
//! against the summed actual demand; RMSE pools all steps of all windows.

use std::fmt::Write as _;
use std::ops::Range;

use chrono::NaiveDate;
use sha2::{Digest, Sha256};

use crate::exec::{self, Execution};
use crate::ingest::DemandPanel;
use crate::models::{
    ar_fit, var_fit, ArModel, Cnn, CnnConfig, CnnLstm, CnnLstmConfig, GcnShape, ModelKind, Network,
    Tgcn, TgcnConfig, VarModel,
};
use crate::models::autoregressive::{AR_JITTER, VAR_JITTER};
use crate::numerics::{DenseArray, ParameterStore};
use crate::topology::{NormalizedAdjacency, RasterSeries};
use crate::training::{
    make_windows, predict_windows, train_from, ForecastWindow, ScalingTransform, TrainConfig, WindowSet,
    WindowSpec,
};
use crate::{Error, Result};

/// Row sums of a `T × D` forecast and its actuals.
pub fn total_system(forecast: &DenseArray, actual: &DenseArray) -> Result<(Vec<f64>, Vec<f64>)> {
    if forecast.shape() != actual.shape() || forecast.ndim() != 2 {
        return Err(Error::ShapeMismatch {
            op: "total_system",
            lhs: forecast.shape().to_vec(),
            rhs: actual.shape().to_vec(),
        });
    }
    let d = forecast.shape()[1];
    let rows = |a: &DenseArray| a.data().chunks(d.max(1)).map(|r| r.iter().sum()).collect();
    Ok((rows(forecast), rows(actual)))
}

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() {
        return Err(Error::ShapeMismatch {
            op: "rmse",
            lhs: vec![pred.len()],
            rhs: vec![actual.len()],
        });
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("RMSE of an empty series".into()));
    }
    let sse: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Population standard deviation (divides by the count, not count − 1).
pub fn population_std(values: &[f64]) -> f64 {
    if values.iter().all(|v| *v == values[0]) {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// The inputs every model draws from.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub panel: DemandPanel,
    pub adjacency: NormalizedAdjacency,
    pub raster: RasterSeries,
}

impl ExperimentData {
    pub fn new(panel: DemandPanel, adjacency: NormalizedAdjacency, raster: RasterSeries) -> Result<Self> {
        if adjacency.n_nodes() != panel.n_stations() {
            return Err(Error::InvalidInput(format!(
                "adjacency has {} nodes but the panel has {} stations",
                adjacency.n_nodes(),
                panel.n_stations()
            )));
        }
        if raster.n_days() != panel.n_days() || raster.start_date() != panel.start_date() {
            return Err(Error::InvalidInput("raster and panel cover different days".into()));
        }
        Ok(Self {
            panel,
            adjacency,
            raster,
        })
    }

    fn totals(&self) -> Vec<f64> {
        self.panel.daily_totals()
    }

    /// The `(L, …)` series a model is fit on, in raw kWh.
    pub fn series_for(&self, kind: ModelKind) -> Result<DenseArray> {
        Ok(match kind {
            ModelKind::Tgcn => self.panel.values().clone(),
            ModelKind::Cnn | ModelKind::CnnLstm => self.raster.grids().clone(),
            ModelKind::Var => self.raster.flattened(),
            ModelKind::Ar | ModelKind::Persistence => {
                let t = self.totals();
                DenseArray::new([t.len(), 1], t)?
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub models: Vec<ModelKind>,
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Lookback for horizons below `long_horizon`.
    pub short_lookback: usize,
    pub long_lookback: usize,
    pub long_horizon: usize,
    pub train: TrainConfig,
    /// First test day; training uses strictly earlier days.
    pub split_date: NaiveDate,
    /// Last test day, inclusive; `None` runs to the end of the panel.
    pub test_end: Option<NaiveDate>,
    pub ar_order: usize,
    pub var_order: usize,
    pub ar_jitter: f64,
    pub var_jitter: f64,
    pub cnn_filters: usize,
    pub cnn_kernel: usize,
    pub lstm_hidden: usize,
    pub gcn: GcnShape,
    pub execution: Execution,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            models: ModelKind::TABLE.to_vec(),
            horizons: vec![1, 7, 30],
            seeds: vec![0, 1, 2],
            short_lookback: 30,
            long_lookback: 120,
            long_horizon: 30,
            train: TrainConfig::default(),
            split_date: NaiveDate::from_ymd_opt(2019, 1, 1).expect("valid date"),
            test_end: NaiveDate::from_ymd_opt(2019, 12, 31),
            ar_order: 30,
            var_order: 30,
            ar_jitter: AR_JITTER,
            var_jitter: VAR_JITTER,
            cnn_filters: 16,
            cnn_kernel: 3,
            lstm_hidden: 50,
            gcn: GcnShape::default(),
            execution: Execution::available(),
        }
    }
}

impl ExperimentConfig {
    pub fn window_spec(&self, horizon: usize) -> Result<WindowSpec> {
        let n = if horizon >= self.long_horizon {
            self.long_lookback
        } else {
            self.short_lookback
        };
        WindowSpec::new(n, horizon)
    }

    /// Train days `[0, s)` and test days `[s, e)` as panel indices.
    pub fn split(&self, panel: &DemandPanel) -> Result<(Range<usize>, Range<usize>)> {
        let last = self.test_end.map_or(panel.end_date(), |d| d.min(panel.end_date()));
        if self.split_date <= panel.start_date() {
            return Err(Error::InvalidInput(format!(
                "split date {} leaves no training days (panel starts {})",
                self.split_date,
                panel.start_date()
            )));
        }
        if self.split_date > last {
            return Err(Error::InvalidInput(format!(
                "empty test period: split date {} is after the last test day {last}",
                self.split_date
            )));
        }
        let s = (self.split_date - panel.start_date()).num_days() as usize;
        let e = (last - panel.start_date()).num_days() as usize + 1;
        Ok((0..s, s..e))
    }

    /// Hex digest of every setting that affects results (execution mode
    /// excluded) and of the data.
    pub fn fingerprint(&self, data: &ExperimentData) -> String {
        let mut canonical = self.clone();
        canonical.execution = Execution::Sequential;
        canonical.train.execution = Execution::Sequential;
        let mut h = Sha256::new();
        h.update(format!("{canonical:?}").as_bytes());
        for a in [data.panel.values(), data.adjacency.matrix(), data.raster.grids()] {
            for v in a.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.update(data.panel.start_date().to_string().as_bytes());
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() || self.horizons.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidInput("models, horizons and seeds must be nonempty".into()));
        }
        if self.horizons.contains(&0) {
            return Err(Error::InvalidInput("horizons must be ≥ 1".into()));
        }
        self.train.validate()
    }
}

pub fn build_network(
    kind: ModelKind,
    horizon: usize,
    data: &ExperimentData,
    config: &ExperimentConfig,
) -> Result<Box<dyn Network>> {
    let spec = config.window_spec(horizon)?;
    let (rows, cols) = (data.raster.rows(), data.raster.cols());
    let cnn = CnnConfig {
        filters: config.cnn_filters,
        kernel: config.cnn_kernel,
        ..CnnConfig::new(rows, cols, spec.lookback, horizon)
    };
    Ok(match kind {
        ModelKind::Tgcn => Box::new(Tgcn::new(
            TgcnConfig {
                gcn: config.gcn,
                hidden: config.lstm_hidden,
                ..TgcnConfig::new(spec.lookback, horizon)
            },
            &data.adjacency,
        )?),
        ModelKind::Cnn => Box::new(Cnn::new(cnn)?),
        ModelKind::CnnLstm => Box::new(CnnLstm::new(CnnLstmConfig {
            cnn,
            hidden: config.lstm_hidden,
        })?),
        other => {
            return Err(Error::InvalidInput(format!("{other} is not a neural network model")));
        }
    })
}

/// A model fit on the training period.
#[derive(Debug, Clone)]
pub enum Fitted {
    Ar(ArModel),
    Var(VarModel),
    Persistence,
    Neural {
        params: ParameterStore,
        scaler: ScalingTransform,
        loss_trace: Vec<f64>,
    },
}

impl Fitted {
    pub fn loss_trace(&self) -> Option<&[f64]> {
        match self {
            Fitted::Neural { loss_trace, .. } => Some(loss_trace),
            _ => None,
        }
    }
}

/// Fits `kind` for `horizon` on the training days. `seed` only matters for
/// neural models.
pub fn fit(
    data: &ExperimentData,
    config: &ExperimentConfig,
    kind: ModelKind,
    horizon: usize,
    seed: u64,
) -> Result<Fitted> {
    let (train, _) = config.split(&data.panel)?;
    let series = data.series_for(kind)?;
    match kind {
        ModelKind::Persistence => Ok(Fitted::Persistence),
        ModelKind::Ar => Ok(Fitted::Ar(ar_fit(
            &series.data()[train],
            config.ar_order,
            config.ar_jitter,
        )?)),
        ModelKind::Var => {
            let k = series.shape()[1];
            let rows = DenseArray::new([train.end, k], series.data()[..train.end * k].to_vec())?;
            Ok(Fitted::Var(var_fit(&rows, config.var_order, config.var_jitter)?))
        }
        ModelKind::Cnn | ModelKind::CnnLstm | ModelKind::Tgcn => {
            let net = build_network(kind, horizon, data, config)?;
            let scaler = ScalingTransform::fit(&series, train.clone())?;
            let scaled = scaler.apply(&series)?;
            let spec = config.window_spec(horizon)?;
            let windows = make_windows(train.end, spec)?;
            let set = WindowSet::gather(&scaled, spec, windows)?;
            let tc = TrainConfig {
                seed,
                ..config.train
            };
            let out = train_from(net.as_ref(), net.init_params(seed)?, &set, &tc)?;
            Ok(Fitted::Neural {
                params: out.params,
                scaler,
                loss_trace: out.loss_trace,
            })
        }
    }
}

/// Total-system forecasts for `windows`, `W × T` row-major.
pub fn forecast_totals(
    data: &ExperimentData,
    config: &ExperimentConfig,
    kind: ModelKind,
    horizon: usize,
    fitted: &Fitted,
    windows: &[ForecastWindow],
) -> Result<Vec<f64>> {
    let series = data.series_for(kind)?;
    let len = series.shape()[0];
    let k = series.len() / len;
    let mut out = Vec::with_capacity(windows.len() * horizon);
    match fitted {
        Fitted::Persistence => {
            for w in windows {
                out.extend(std::iter::repeat_n(series.data()[w.end], horizon));
            }
        }
        Fitted::Ar(m) => {
            for w in windows {
                out.extend(m.predict(&series.data()[..=w.end], horizon)?);
            }
        }
        Fitted::Var(m) => {
            for w in windows {
                let hist = DenseArray::new([w.end + 1, k], series.data()[..(w.end + 1) * k].to_vec())?;
                let f = m.predict(&hist, horizon)?;
                out.extend(f.data().chunks(k).map(|r| r.iter().sum::<f64>()));
            }
        }
        Fitted::Neural { params, scaler, .. } => {
            let net = build_network(kind, horizon, data, config)?;
            let spec = config.window_spec(horizon)?;
            let scaled = scaler.apply(&series)?;
            let set = WindowSet::gather(&scaled, spec, windows.to_vec())?;
            let pred = predict_windows(
                net.as_ref(),
                params,
                &set.inputs,
                config.train.chunk_size.max(64),
                config.execution,
            )?;
            let pred = scaler.invert(&pred)?;
            out.extend(pred.data().chunks(k).map(|r| r.iter().sum::<f64>()));
        }
    }
    Ok(out)
}

/// Scored forecasts of one fitted model for one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TestForecast {
    pub horizon: usize,
    /// Windows ending at `d − T` for every test day `d`, so step `T` of
    /// window `i` forecasts test day `i`.
    pub windows: Vec<ForecastWindow>,
    pub predicted: Vec<f64>,
    /// Index of the first window whose targets all lie in the test period.
    pub first_scored: usize,
    pub rmse: f64,
}

impl TestForecast {
    /// The `T`-step-ahead forecast of each test day.
    pub fn trace(&self) -> Vec<f64> {
        let t = self.horizon;
        (0..self.windows.len()).map(|i| self.predicted[i * t + t - 1]).collect()
    }
}

pub fn test_forecast(
    data: &ExperimentData,
    config: &ExperimentConfig,
    kind: ModelKind,
    horizon: usize,
    fitted: &Fitted,
) -> Result<TestForecast> {
    let (_, test) = config.split(&data.panel)?;
    let spec = config.window_spec(horizon)?;
    let first_end = test.start.checked_sub(horizon).filter(|e| e + 1 >= spec.lookback).ok_or(
        Error::SeriesTooShort {
            required: spec.lookback + horizon,
            actual: test.start,
        },
    )?;
    let windows: Vec<ForecastWindow> = (first_end..test.end - horizon)
        .map(|end| ForecastWindow { end })
        .collect();
    let first_scored = horizon - 1;
    if windows.len() <= first_scored {
        return Err(Error::InvalidInput(format!(
            "test period of {} days is shorter than the {horizon}-day horizon",
            test.len()
        )));
    }
    let predicted = forecast_totals(data, config, kind, horizon, fitted, &windows)?;
    let totals = data.totals();
    let actual: Vec<f64> = windows[first_scored..]
        .iter()
        .flat_map(|w| totals[w.targets(spec)].to_vec())
        .collect();
    let rmse = rmse(&predicted[first_scored * horizon..], &actual)?;
    Ok(TestForecast {
        horizon,
        windows,
        predicted,
        first_scored,
        rmse,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model: ModelKind,
    pub label: String,
    pub horizon: usize,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Seed-averaged total-system forecast of one model over the test period.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastTrace {
    pub model: ModelKind,
    pub label: String,
    pub horizon: usize,
    pub dates: Vec<NaiveDate>,
    pub forecast: Vec<f64>,
    pub actual: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub traces: Vec<ForecastTrace>,
    pub models: Vec<ModelKind>,
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
    pub split_date: NaiveDate,
    pub test_first: NaiveDate,
    pub test_last: NaiveDate,
    pub fingerprint: String,
    pub labels: Vec<(ModelKind, String)>,
}

impl EvalReport {
    pub fn row(&self, model: ModelKind, horizon: usize) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.model == model && r.horizon == horizon)
    }

    pub fn trace(&self, model: ModelKind, horizon: usize) -> Option<&ForecastTrace> {
        self.traces.iter().find(|r| r.model == model && r.horizon == horizon)
    }

    fn seed_list(&self) -> String {
        self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" ")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "model,label,horizon_days,mean_rmse,std_rmse_population,seeds,per_seed_rmse,fingerprint\n",
        );
        for r in &self.rows {
            let per: Vec<String> = r.per_seed.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{},{},{}",
                r.model,
                r.label,
                r.horizon,
                r.mean,
                r.std,
                self.seed_list(),
                per.join(" "),
                self.fingerprint
            );
        }
        out
    }

    /// Models as rows, horizons as columns, `mean ± std` cells.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Total-system RMSE (kWh): mean ± std over seeds {}", self.seed_list());
        let _ = writeln!(out, "std: population formula (divides by the number of seeds)");
        let _ = writeln!(
            out,
            "train: days before {}; test: {} to {}; rolling forecasts from one fit, no retraining",
            self.split_date, self.test_first, self.test_last
        );
        let _ = writeln!(out, "fingerprint: {}", self.fingerprint);
        out.push('\n');
        let cells: Vec<Vec<String>> = self
            .labels
            .iter()
            .map(|(model, label)| {
                let mut row = vec![label.clone()];
                for &h in &self.horizons {
                    row.push(match self.row(*model, h) {
                        Some(r) => format!("{:.2} ± {:.2}", r.mean, r.std),
                        None => "-".into(),
                    });
                }
                row
            })
            .collect();
        let mut header = vec!["Model".to_string()];
        header.extend(
            self.horizons
                .iter()
                .map(|h| if *h == 1 { "1 day".into() } else { format!("{h} days") }),
        );
        let widths: Vec<usize> = (0..header.len())
            .map(|c| {
                cells
                    .iter()
                    .map(|r| r[c].chars().count())
                    .chain([header[c].chars().count()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |row: &[String]| {
            let mut s = String::new();
            for (c, cell) in row.iter().enumerate() {
                let pad = widths[c] - cell.chars().count();
                if c == 0 {
                    s.push_str(cell);
                    s.push_str(&" ".repeat(pad));
                } else {
                    s.push_str("  ");
                    s.push_str(&" ".repeat(pad));
                    s.push_str(cell);
                }
            }
            s.trim_end().to_string()
        };
        let _ = writeln!(out, "{}", line(&header));
        let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        for row in &cells {
            let _ = writeln!(out, "{}", line(row));
        }
        out
    }

    /// `date,actual,<label>…` for one horizon; one row per test day.
    pub fn traces_csv(&self, horizon: usize) -> Result<String> {
        let traces: Vec<&ForecastTrace> = self.traces.iter().filter(|t| t.horizon == horizon).collect();
        let first = traces
            .first()
            .ok_or_else(|| Error::InvalidInput(format!("no forecasts for horizon {horizon}")))?;
        let mut out = String::from("date,actual");
        for t in &traces {
            let _ = write!(out, ",{}", t.label);
        }
        out.push('\n');
        for (i, d) in first.dates.iter().enumerate() {
            let _ = write!(out, "{d},{}", first.actual[i]);
            for t in &traces {
                let _ = write!(out, ",{}", t.forecast[i]);
            }
            out.push('\n');
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy)]
struct Job {
    kind: ModelKind,
    horizon: usize,
    seed: Option<u64>,
}

/// Trains and scores every `(model, horizon)` cell; stochastic models once
/// per seed, deterministic ones once.
pub fn run_experiment(data: &ExperimentData, config: &ExperimentConfig) -> Result<EvalReport> {
    run_experiment_with(data, config, |data, config, kind, horizon, seed| {
        fit(data, config, kind, horizon, seed)
    })
}

/// Like [`run_experiment`] with a custom source of fitted models (for
/// example, checkpoints on disk).
pub fn run_experiment_with<F>(data: &ExperimentData, config: &ExperimentConfig, fitter: F) -> Result<EvalReport>
where
    F: Fn(&ExperimentData, &ExperimentConfig, ModelKind, usize, u64) -> Result<Fitted> + Sync + Send,
{
    config.validate()?;
    let (_, test) = config.split(&data.panel)?;
    let mut jobs = Vec::new();
    for &kind in &config.models {
        for &horizon in &config.horizons {
            if kind.is_stochastic() {
                jobs.extend(config.seeds.iter().map(|&s| Job {
                    kind,
                    horizon,
                    seed: Some(s),
                }));
            } else {
                jobs.push(Job {
                    kind,
                    horizon,
                    seed: None,
                });
            }
        }
    }
    let results = exec::try_map(config.execution, &jobs, |job| -> Result<TestForecast> {
        let seed = job.seed.unwrap_or(config.seeds[0]);
        let fitted = fitter(data, config, job.kind, job.horizon, seed)?;
        test_forecast(data, config, job.kind, job.horizon, &fitted)
    })?;

    let totals = data.totals();
    let dates: Vec<NaiveDate> = test.clone().map(|d| data.panel.date(d)).collect();
    let actual: Vec<f64> = totals[test.clone()].to_vec();
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    let mut labels = Vec::new();
    for &kind in &config.models {
        let label = kind.label(if kind == ModelKind::Var {
            config.var_order
        } else {
            config.ar_order
        });
        labels.push((kind, label.clone()));
        for &horizon in &config.horizons {
            let runs: Vec<&TestForecast> = jobs
                .iter()
                .zip(&results)
                .filter(|(j, _)| j.kind == kind && j.horizon == horizon)
                .map(|(_, r)| r)
                .collect();
            let per_seed: Vec<f64> = if kind.is_stochastic() {
                runs.iter().map(|r| r.rmse).collect()
            } else {
                vec![runs[0].rmse; config.seeds.len()]
            };
            let mean = if kind.is_stochastic() {
                per_seed.iter().sum::<f64>() / per_seed.len() as f64
            } else {
                per_seed[0]
            };
            let std = population_std(&per_seed);
            let mut forecast = vec![0.0; dates.len()];
            for r in &runs {
                for (f, v) in forecast.iter_mut().zip(r.trace()) {
                    *f += v;
                }
            }
            forecast.iter_mut().for_each(|f| *f /= runs.len() as f64);
            traces.push(ForecastTrace {
                model: kind,
                label: label.clone(),
                horizon,
                dates: dates.clone(),
                forecast,
                actual: actual.clone(),
            });
            rows.push(ReportRow {
                model: kind,
                label: label.clone(),
                horizon,
                per_seed,
                mean,
                std,
            });
        }
    }
    Ok(EvalReport {
        rows,
        traces,
        models: config.models.clone(),
        horizons: config.horizons.clone(),
        seeds: config.seeds.clone(),
        split_date: config.split_date,
        test_first: dates[0],
        test_last: *dates.last().expect("nonempty test period"),
        fingerprint: config.fingerprint(data),
        labels,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::synthetic::{generate, SyntheticConfig};
    use crate::topology::{build_graph, build_raster, normalize_adjacency, DEFAULT_CUTOFF_KM};

    fn toy_data(days: usize, constant: bool) -> ExperimentData {
        let net = generate(&SyntheticConfig {
            stations: 4,
            days,
            start: NaiveDate::from_ymd_opt(2018, 10, 1).unwrap(),
            ..SyntheticConfig::default()
        })
        .unwrap();
        let panel = if constant {
            DemandPanel::new(
                net.panel.start_date(),
                net.panel.station_ids().to_vec(),
                DenseArray::full([days, 4], 2.5),
            )
            .unwrap()
        } else {
            net.panel
        };
        let adj = normalize_adjacency(&build_graph(&net.registry, DEFAULT_CUTOFF_KM).unwrap());
        let raster = build_raster(&net.registry, &panel, 2, 2).unwrap();
        ExperimentData::new(panel, adj, raster).unwrap()
    }

    fn toy_config(models: Vec<ModelKind>) -> ExperimentConfig {
        ExperimentConfig {
            models,
            horizons: vec![1, 3],
            short_lookback: 6,
            long_lookback: 8,
            long_horizon: 3,
            ar_order: 4,
            var_order: 2,
            lstm_hidden: 4,
            cnn_filters: 2,
            gcn: GcnShape {
                in_features: 1,
                hidden: 3,
                out_features: 2,
            },
            train: TrainConfig {
                epochs: 3,
                ..TrainConfig::default()
            },
            split_date: NaiveDate::from_ymd_opt(2018, 12, 1).unwrap(),
            test_end: NaiveDate::from_ymd_opt(2018, 12, 20),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!((rmse(&[3.5, -1.5], &[1.0, -4.0]).unwrap() - 2.5).abs() < 1e-15);
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn total_system_examples() {
        let f = DenseArray::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let (p, a) = total_system(&f, &f).unwrap();
        assert_eq!((p, a), (vec![6.0], vec![6.0]));
        let col = DenseArray::new([3, 1], vec![4.0, 5.0, 6.0]).unwrap();
        assert_eq!(total_system(&col, &col).unwrap().0, [4.0, 5.0, 6.0]);
        assert!(total_system(&f, &col).is_err());
    }

    #[test]
    fn population_std_divides_by_count() {
        assert_eq!(population_std(&[1.0, 3.0]), 1.0);
        assert_eq!(population_std(&[7.0; 3]), 0.0);
    }

    #[test]
    fn persistence_on_constant_series_scores_zero() {
        let data = toy_data(120, true);
        let cfg = toy_config(vec![ModelKind::Persistence, ModelKind::Ar]);
        let report = run_experiment(&data, &cfg).unwrap();
        for h in [1, 3] {
            assert_eq!(report.row(ModelKind::Persistence, h).unwrap().mean, 0.0);
            assert!(report.row(ModelKind::Ar, h).unwrap().mean < 1e-6);
        }
    }

    #[test]
    fn grid_shape_deterministic_baselines_and_trace_length() {
        let data = toy_data(120, false);
        let cfg = toy_config(vec![ModelKind::Ar, ModelKind::Var, ModelKind::Cnn, ModelKind::Tgcn]);
        let report = run_experiment(&data, &cfg).unwrap();
        assert_eq!(report.rows.len(), 4 * 2);
        for h in [1, 3] {
            assert_eq!(report.row(ModelKind::Ar, h).unwrap().std, 0.0);
            assert_eq!(report.row(ModelKind::Var, h).unwrap().std, 0.0);
            assert_eq!(report.row(ModelKind::Tgcn, h).unwrap().per_seed.len(), 3);
            assert_eq!(report.trace(ModelKind::Cnn, h).unwrap().forecast.len(), 20);
        }
        let table = report.to_table();
        assert!(table.contains("AR(4)") && table.contains("T-GCN") && table.contains("3 days"));
        assert_eq!(report.traces_csv(1).unwrap().lines().count(), 21);
    }

    #[test]
    fn report_bytes_do_not_depend_on_execution_mode() {
        let data = toy_data(100, false);
        let mut cfg = toy_config(vec![ModelKind::CnnLstm, ModelKind::Ar]);
        cfg.horizons = vec![1];
        cfg.execution = Execution::Sequential;
        cfg.train.execution = Execution::Sequential;
        let a = run_experiment(&data, &cfg).unwrap();
        cfg.execution = Execution::Parallel;
        cfg.train.execution = Execution::Parallel;
        let b = run_experiment(&data, &cfg).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.to_table(), b.to_table());
    }

    #[test]
    fn split_errors() {
        let data = toy_data(60, false);
        let mut cfg = toy_config(vec![ModelKind::Ar]);
        cfg.split_date = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        assert!(cfg.split(&data.panel).unwrap_err().to_string().contains("empty test period"));
        cfg.split_date = NaiveDate::from_ymd_opt(2010, 1, 1).unwrap();
        assert!(cfg.split(&data.panel).is_err());
    }

    #[test]
    fn station_and_single_cell_totals_agree() {
        let data = toy_data(40, false);
        let one = build_raster(
            &crate::synthetic::generate(&SyntheticConfig {
                stations: 4,
                days: 40,
                start: NaiveDate::from_ymd_opt(2018, 10, 1).unwrap(),
                ..SyntheticConfig::default()
            })
            .unwrap()
            .registry,
            &data.panel,
            1,
            1,
        )
        .unwrap();
        for (a, b) in one.daily_totals().iter().zip(data.panel.daily_totals()) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    proptest! {
        #[test]
        fn rmse_properties(pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..40), shift in 0usize..40, c in -50.0f64..50.0) {
            let (p, a): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let r = rmse(&p, &a).unwrap();
            prop_assert!(r >= 0.0);
            let mut pr = p.clone();
            let mut ar = a.clone();
            let k = shift % p.len();
            pr.rotate_left(k);
            ar.rotate_left(k);
            prop_assert!((rmse(&pr, &ar).unwrap() - r).abs() <= 1e-9 * (1.0 + r));
            prop_assert_eq!(rmse(&a, &a).unwrap(), 0.0);
            let shifted: Vec<f64> = a.iter().map(|v| v + c).collect();
            prop_assert!((rmse(&shifted, &a).unwrap() - c.abs()).abs() <= 1e-9 * (1.0 + c.abs()));
        }
    }
}
