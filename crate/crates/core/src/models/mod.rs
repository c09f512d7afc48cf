//! Forecasters mapping a lookback window to a multi-step forecast.
//!
//! Trainable networks implement [`Network`] and work on batches:
//! input `(batch, lookback, spatial…)` → output `(batch, horizon, spatial…)`.
//! The least-squares baselines live in [`autoregressive`].

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{Bound, DenseArray, ParameterStore, Tape, Var};
use crate::{Error, Result};

pub mod autoregressive;
pub mod cnn;
pub mod gcn;
pub mod lstm;
pub mod tgcn;

pub use autoregressive::{ar_fit, var_fit, ArModel, VarModel};
pub use cnn::{Cnn, CnnConfig, CnnLstm, CnnLstmConfig};
pub use gcn::{gcn_forward, GcnShape, OutputActivation};
pub use lstm::{LstmParams, LstmState};
pub use tgcn::{Tgcn, TgcnConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Ar,
    Var,
    Cnn,
    CnnLstm,
    Tgcn,
    Persistence,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Ar,
        ModelKind::Var,
        ModelKind::Cnn,
        ModelKind::CnnLstm,
        ModelKind::Tgcn,
        ModelKind::Persistence,
    ];

    /// The five models of the comparison table, in row order.
    pub const TABLE: [ModelKind; 5] = [
        ModelKind::Ar,
        ModelKind::Var,
        ModelKind::Cnn,
        ModelKind::CnnLstm,
        ModelKind::Tgcn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ar => "ar",
            ModelKind::Var => "var",
            ModelKind::Cnn => "cnn",
            ModelKind::CnnLstm => "cnn_lstm",
            ModelKind::Tgcn => "tgcn",
            ModelKind::Persistence => "persistence",
        }
    }

    /// Row label used in reports.
    pub fn label(self, order: usize) -> String {
        match self {
            ModelKind::Ar => format!("AR({order})"),
            ModelKind::Var => format!("VAR({order})"),
            ModelKind::Cnn => "CNN".into(),
            ModelKind::CnnLstm => "CNN+LSTM".into(),
            ModelKind::Tgcn => "T-GCN".into(),
            ModelKind::Persistence => "Persistence".into(),
        }
    }

    /// Whether training depends on a random seed.
    pub fn is_stochastic(self) -> bool {
        matches!(self, ModelKind::Cnn | ModelKind::CnnLstm | ModelKind::Tgcn)
    }

    /// Whether the model forecasts on raster cells (as opposed to stations
    /// or the total series).
    pub fn uses_raster(self) -> bool {
        matches!(self, ModelKind::Var | ModelKind::Cnn | ModelKind::CnnLstm)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = ModelKind::ALL.iter().map(|k| k.name()).collect();
                Error::InvalidInput(format!(
                    "unknown model '{s}'; valid names: {}",
                    valid.join(", ")
                ))
            })
    }
}

/// A trainable forecaster over batched windows.
pub trait Network: Send + Sync + fmt::Debug {
    fn kind(&self) -> ModelKind;

    /// Per-sample input shape, lag axis first.
    fn input_shape(&self) -> Vec<usize>;

    /// Per-sample output shape, horizon axis first.
    fn output_shape(&self) -> Vec<usize>;

    /// Fresh parameters, deterministic in `seed`.
    fn init_params(&self, seed: u64) -> Result<ParameterStore> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.init_params_with(&mut rng)
    }

    fn init_params_with(&self, rng: &mut ChaCha8Rng) -> Result<ParameterStore>;

    /// Records the forward pass for a `(batch, …input_shape)` input.
    fn forward(&self, tape: &mut Tape, params: &Bound, input: Var) -> Result<Var>;

    /// Inference without gradients.
    fn predict(&self, params: &ParameterStore, input: &DenseArray) -> Result<DenseArray> {
        let mut tape = Tape::new();
        let bound = tape.bind(params);
        let x = tape.constant(input.clone());
        let out = self.forward(&mut tape, &bound, x)?;
        Ok(tape.value(out).clone())
    }
}

/// Checks a batched input against `(batch, expected…)` and returns the batch size.
pub(crate) fn check_batch(op: &'static str, actual: &[usize], expected: &[usize]) -> Result<usize> {
    if actual.len() != expected.len() + 1 || &actual[1..] != expected {
        let mut want = vec![0];
        want.extend_from_slice(expected);
        return Err(Error::ShapeMismatch {
            op,
            lhs: actual.to_vec(),
            rhs: want,
        });
    }
    Ok(actual[0])
}

pub(crate) const READOUT_W: &str = "readout.w";
pub(crate) const READOUT_B: &str = "readout.b";

/// Linear map from the final hidden state to `outputs` values per sample.
pub(crate) fn init_readout(
    store: &mut ParameterStore,
    hidden: usize,
    outputs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    store.insert_glorot(READOUT_W, [hidden, outputs], hidden, outputs, rng)?;
    store.insert(READOUT_B, DenseArray::zeros([outputs]))
}

pub(crate) fn readout(tape: &mut Tape, params: &Bound, h: Var) -> Result<Var> {
    let y = tape.matmul(h, params.var(READOUT_W)?)?;
    tape.bias_add(y, params.var(READOUT_B)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip_and_unknown_lists_valid() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        let err = "lstm".parse::<ModelKind>().unwrap_err().to_string();
        assert!(err.contains("tgcn") && err.contains("cnn_lstm"));
    }
}
