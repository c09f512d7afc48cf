//! Supervised windows, min-max scaling, the MAE + ℓ2 objective and the
//! full-batch Adam loop.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::exec::{self, Execution};
use crate::models::Network;
use crate::numerics::{adam_step, AdamState, Bound, DenseArray, Gradients, ParameterStore, Tape, Var};
use crate::{Error, Result};

/// Lookback `n` and horizon `T`; windows advance one day at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub lookback: usize,
    pub horizon: usize,
}

impl WindowSpec {
    pub fn new(lookback: usize, horizon: usize) -> Result<Self> {
        if lookback == 0 || horizon == 0 {
            return Err(Error::InvalidInput("lookback and horizon must be ≥ 1".into()));
        }
        Ok(Self { lookback, horizon })
    }

    /// 30 days of history for short horizons, 120 for 30-day forecasts.
    pub fn default_for_horizon(horizon: usize) -> Result<Self> {
        Self::new(if horizon >= 30 { 120 } else { 30 }, horizon)
    }

    pub fn min_len(&self) -> usize {
        self.lookback + self.horizon
    }
}

/// A window identified by the index `end` of its last input day: inputs
/// cover `end+1−n ..= end`, targets `end+1 ..= end+T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ForecastWindow {
    pub end: usize,
}

impl ForecastWindow {
    pub fn inputs(&self, spec: WindowSpec) -> Range<usize> {
        self.end + 1 - spec.lookback..self.end + 1
    }

    pub fn targets(&self, spec: WindowSpec) -> Range<usize> {
        self.end + 1..self.end + 1 + spec.horizon
    }
}

/// Every window of a series of length `len`, in time order.
pub fn make_windows(len: usize, spec: WindowSpec) -> Result<Vec<ForecastWindow>> {
    if len < spec.min_len() {
        return Err(Error::SeriesTooShort {
            required: spec.min_len(),
            actual: len,
        });
    }
    Ok((spec.lookback - 1..len - spec.horizon)
        .map(|end| ForecastWindow { end })
        .collect())
}

/// Windows whose targets all lie in `days` and whose inputs start at or
/// after day 0.
pub fn windows_with_targets_in(
    len: usize,
    spec: WindowSpec,
    days: Range<usize>,
) -> Result<Vec<ForecastWindow>> {
    Ok(make_windows(len, spec)?
        .into_iter()
        .filter(|w| {
            let t = w.targets(spec);
            t.start >= days.start && t.end <= days.end
        })
        .collect())
}

/// Batched inputs `(B, n, …)` and targets `(B, T, …)` gathered from a
/// `(L, …)` series.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub spec: WindowSpec,
    pub windows: Vec<ForecastWindow>,
    pub inputs: DenseArray,
    pub targets: DenseArray,
}

impl WindowSet {
    pub fn gather(series: &DenseArray, spec: WindowSpec, windows: Vec<ForecastWindow>) -> Result<Self> {
        if series.ndim() < 2 {
            return Err(Error::InvalidInput("series needs a time axis and ≥ 1 spatial axis".into()));
        }
        let len = series.shape()[0];
        let spatial = &series.shape()[1..];
        let row = spatial.iter().product::<usize>();
        let mut inputs = Vec::with_capacity(windows.len() * spec.lookback * row);
        let mut targets = Vec::with_capacity(windows.len() * spec.horizon * row);
        for w in &windows {
            if w.end + 1 < spec.lookback || w.end + spec.horizon >= len {
                return Err(Error::InvalidInput(format!(
                    "window ending at day {} does not fit a series of length {len}",
                    w.end
                )));
            }
            let r = w.inputs(spec);
            inputs.extend_from_slice(&series.data()[r.start * row..r.end * row]);
            let r = w.targets(spec);
            targets.extend_from_slice(&series.data()[r.start * row..r.end * row]);
        }
        let shape = |steps: usize| {
            let mut s = vec![windows.len(), steps];
            s.extend_from_slice(spatial);
            s
        };
        Ok(Self {
            spec,
            inputs: DenseArray::new(shape(spec.lookback), inputs)?,
            targets: DenseArray::new(shape(spec.horizon), targets)?,
            windows,
        })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Consecutive `(inputs, targets)` batches of at most `size` windows.
    pub fn chunks(&self, size: usize) -> Result<Vec<(DenseArray, DenseArray)>> {
        let size = size.max(1);
        let take = |a: &DenseArray, lo: usize, hi: usize| {
            let per = a.len() / self.len();
            let mut shape = a.shape().to_vec();
            shape[0] = hi - lo;
            DenseArray::new(shape, a.data()[lo * per..hi * per].to_vec())
        };
        (0..self.len())
            .step_by(size)
            .map(|lo| {
                let hi = (lo + size).min(self.len());
                Ok((take(&self.inputs, lo, hi)?, take(&self.targets, lo, hi)?))
            })
            .collect()
    }
}

/// Per-column min-max scaling to `[0, 1]`. Columns are the non-time
/// entries of a `(L, …)` series; constant columns map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingTransform {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScalingTransform {
    /// Statistics from the rows `rows` of `series` only.
    pub fn fit(series: &DenseArray, rows: Range<usize>) -> Result<Self> {
        if series.ndim() < 2 || rows.is_empty() || rows.end > series.shape()[0] {
            return Err(Error::InvalidInput(format!(
                "cannot fit a scaler on rows {rows:?} of a series shaped {:?}",
                series.shape()
            )));
        }
        let cols = series.len() / series.shape()[0];
        let mut min = vec![f64::INFINITY; cols];
        let mut max = vec![f64::NEG_INFINITY; cols];
        for r in rows {
            for (c, &v) in series.data()[r * cols..(r + 1) * cols].iter().enumerate() {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn columns(&self) -> usize {
        self.min.len()
    }

    fn check(&self, a: &DenseArray) -> Result<()> {
        if !a.len().is_multiple_of(self.columns()) {
            return Err(Error::ShapeMismatch {
                op: "scaling",
                lhs: a.shape().to_vec(),
                rhs: vec![self.columns()],
            });
        }
        Ok(())
    }

    /// Scales any array whose trailing entries cycle over the fitted columns.
    pub fn apply(&self, a: &DenseArray) -> Result<DenseArray> {
        self.check(a)?;
        let mut out = a.clone();
        let cols = self.columns();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let (lo, hi) = (self.min[i % cols], self.max[i % cols]);
            *v = if hi > lo { (*v - lo) / (hi - lo) } else { 0.0 };
        }
        Ok(out)
    }

    pub fn invert(&self, a: &DenseArray) -> Result<DenseArray> {
        self.check(a)?;
        let mut out = a.clone();
        let cols = self.columns();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let (lo, hi) = (self.min[i % cols], self.max[i % cols]);
            *v = *v * (hi - lo) + lo;
        }
        Ok(out)
    }
}

/// `Σ|target − pred| / count`, so chunk terms add up to the global mean.
pub fn mae_term(tape: &mut Tape, pred: Var, target: Var, count: usize) -> Result<Var> {
    let diff = tape.sub(target, pred)?;
    let abs = tape.abs(diff);
    let total = tape.sum(abs);
    Ok(tape.scale(total, 1.0 / count as f64))
}

/// `λ · Σβ²` over every bound parameter.
pub fn l2_term(tape: &mut Tape, params: &Bound, lambda: f64) -> Result<Var> {
    let mut acc: Option<Var> = None;
    let vars: Vec<Var> = params.vars().map(|(_, v)| v).collect();
    for v in vars {
        let sq = tape.mul(v, v)?;
        let s = tape.sum(sq);
        acc = Some(match acc {
            Some(a) => tape.add(a, s)?,
            None => s,
        });
    }
    let total = acc.unwrap_or_else(|| tape.constant(DenseArray::scalar(0.0)));
    Ok(tape.scale(total, lambda))
}

/// Mean absolute error plus `λ · Σβ²` over `store`.
pub fn loss(pred: &DenseArray, target: &DenseArray, store: &ParameterStore, lambda: f64) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            op: "loss",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("loss over zero entries".into()));
    }
    let mae = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (t - p).abs())
        .sum::<f64>()
        / pred.len() as f64;
    Ok(mae + lambda * store.sum_squares())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub seed: u64,
    /// Windows per gradient chunk; chunks are summed into one full-batch step.
    pub chunk_size: usize,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            lambda: 1e-3,
            learning_rate: 1e-3,
            seed: 0,
            chunk_size: 32,
            execution: Execution::available(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidInput("epochs must be ≥ 1".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidInput(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidInput(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParameterStore,
    /// Objective value at the start of each epoch, before its update.
    pub loss_trace: Vec<f64>,
}

impl TrainOutcome {
    pub fn loss_trace_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (i, l) in self.loss_trace.iter().enumerate() {
            out.push_str(&format!("{},{l:.12e}\n", i + 1));
        }
        out
    }
}

/// Full-batch objective and gradient at `store`.
pub fn objective(
    model: &dyn Network,
    store: &ParameterStore,
    chunks: &[(DenseArray, DenseArray)],
    lambda: f64,
    execution: Execution,
) -> Result<(f64, Gradients)> {
    let count: usize = chunks.iter().map(|(_, t)| t.len()).sum();
    let parts = exec::try_map(execution, chunks, |(x, y)| -> Result<(f64, Gradients)> {
        let mut tape = Tape::new();
        let bound = tape.bind(store);
        let x = tape.constant(x.clone());
        let y = tape.constant(y.clone());
        let pred = model.forward(&mut tape, &bound, x)?;
        let l = mae_term(&mut tape, pred, y, count)?;
        let value = tape.value(l).item();
        Ok((value, tape.backward(l)?))
    })?;

    let mut tape = Tape::new();
    let bound = tape.bind(store);
    let reg = l2_term(&mut tape, &bound, lambda)?;
    let mut total = tape.value(reg).item();
    let mut grads = tape.backward(reg)?;
    for (v, g) in &parts {
        total += v;
        grads.add_assign(g);
    }
    Ok((total, grads))
}

/// Initializes `model` from `config.seed` and trains it for exactly
/// `config.epochs` Adam steps.
pub fn train(model: &dyn Network, data: &WindowSet, config: &TrainConfig) -> Result<TrainOutcome> {
    let params = model.init_params(config.seed)?;
    train_from(model, params, data, config)
}

pub fn train_from(
    model: &dyn Network,
    mut params: ParameterStore,
    data: &WindowSet,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("no training windows".into()));
    }
    let chunks = data.chunks(config.chunk_size)?;
    let mut adam = AdamState::new(&params, config.learning_rate);
    let mut loss_trace = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let (value, grads) = objective(model, &params, &chunks, config.lambda, config.execution)?;
        if !value.is_finite() {
            return Err(Error::Diverged { epoch, loss: value });
        }
        loss_trace.push(value);
        params.zero_grads();
        params.accumulate_grads(&grads)?;
        adam_step(&mut params, &mut adam);
        if epoch % 100 == 0 {
            log::debug!("epoch {epoch}: loss {value:.6}");
        }
    }
    Ok(TrainOutcome { params, loss_trace })
}

/// Batched inference, chunked to bound tape memory.
pub fn predict_windows(
    model: &dyn Network,
    params: &ParameterStore,
    inputs: &DenseArray,
    chunk_size: usize,
    execution: Execution,
) -> Result<DenseArray> {
    let b = inputs.shape()[0];
    if b == 0 {
        return Err(Error::InvalidInput("no windows to predict".into()));
    }
    let per = inputs.len() / b;
    let size = chunk_size.max(1);
    let bounds: Vec<(usize, usize)> = (0..b).step_by(size).map(|lo| (lo, (lo + size).min(b))).collect();
    let outs = exec::try_map(execution, &bounds, |&(lo, hi)| -> Result<DenseArray> {
        let mut shape = inputs.shape().to_vec();
        shape[0] = hi - lo;
        let x = DenseArray::new(shape, inputs.data()[lo * per..hi * per].to_vec())?;
        model.predict(params, &x)
    })?;
    let mut shape = outs[0].shape().to_vec();
    shape[0] = b;
    let data = outs.into_iter().flat_map(DenseArray::into_data).collect();
    DenseArray::new(shape, data)
}
