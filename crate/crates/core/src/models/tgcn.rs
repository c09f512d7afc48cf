//! Temporal graph convolution: per-lag GCN features drive an LSTM whose
//! final hidden state is read out as a joint `horizon × nodes` forecast.

use rand_chacha::ChaCha8Rng;

use super::gcn::{self, GcnShape, OutputActivation};
use super::lstm::{LstmParams, LstmState};
use super::{check_batch, init_readout, readout, ModelKind, Network};
use crate::numerics::{Bound, DenseArray, ParameterStore, Tape, Var};
use crate::topology::NormalizedAdjacency;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TgcnConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub gcn: GcnShape,
    pub hidden: usize,
}

impl TgcnConfig {
    pub fn new(lookback: usize, horizon: usize) -> Self {
        Self {
            lookback,
            horizon,
            gcn: GcnShape::default(),
            hidden: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Tgcn {
    config: TgcnConfig,
    adjacency: DenseArray,
    lstm: LstmParams,
}

impl Tgcn {
    pub fn new(config: TgcnConfig, adjacency: &NormalizedAdjacency) -> Result<Self> {
        if config.gcn.in_features != 1 {
            return Err(Error::InvalidInput(
                "T-GCN node features are scalar demand (in_features = 1)".into(),
            ));
        }
        if config.lookback == 0 || config.horizon == 0 {
            return Err(Error::InvalidInput("lookback and horizon must be ≥ 1".into()));
        }
        Ok(Self {
            config,
            adjacency: adjacency.matrix().clone(),
            lstm: LstmParams::new("lstm"),
        })
    }

    pub fn config(&self) -> &TgcnConfig {
        &self.config
    }

    fn nodes(&self) -> usize {
        self.adjacency.shape()[0]
    }
}

impl Network for Tgcn {
    fn kind(&self) -> ModelKind {
        ModelKind::Tgcn
    }

    fn input_shape(&self) -> Vec<usize> {
        vec![self.config.lookback, self.nodes()]
    }

    fn output_shape(&self) -> Vec<usize> {
        vec![self.config.horizon, self.nodes()]
    }

    fn init_params_with(&self, rng: &mut ChaCha8Rng) -> Result<ParameterStore> {
        let c = &self.config;
        let mut store = ParameterStore::new();
        gcn::init_params(&mut store, c.gcn, rng)?;
        self.lstm
            .init(&mut store, self.nodes() * c.gcn.out_features, c.hidden, rng)?;
        init_readout(&mut store, c.hidden, c.horizon * self.nodes(), rng)?;
        Ok(store)
    }

    fn forward(&self, tape: &mut Tape, params: &Bound, input: Var) -> Result<Var> {
        let n = self.nodes();
        let c = &self.config;
        let batch = check_batch("tgcn input", tape.value(input).shape(), &self.input_shape())?;
        let adjacency = tape.constant(self.adjacency.clone());
        let mut state = LstmState::zeros(tape, batch, c.hidden);
        for lag in 0..c.lookback {
            let x = tape.slice(input, 1, lag, 1)?;
            let x = tape.reshape(x, [batch, n, 1])?;
            let feats = gcn::gcn_forward(tape, adjacency, x, params, OutputActivation::Linear)?;
            let feats = tape.reshape(feats, [batch, n * c.gcn.out_features])?;
            state = self.lstm.cell(tape, params, feats, state)?;
        }
        let y = readout(tape, params, state.h)?;
        tape.reshape(y, [batch, c.horizon, n])
    }
}
