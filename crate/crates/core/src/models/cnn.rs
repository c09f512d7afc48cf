//! Raster-map forecasters.
//!
//! [`Cnn`] stacks the lookback grids as input channels, applies one
//! same-padded convolution with ReLU and a 1×1 linear convolution to
//! `horizon` output channels. [`CnnLstm`] convolves each lag's grid with a
//! shared filter bank, flattens the feature maps and feeds them through an
//! LSTM whose final hidden state is read out to `horizon × rows × cols`.

use rand_chacha::ChaCha8Rng;

use super::lstm::{LstmParams, LstmState};
use super::{check_batch, init_readout, readout, ModelKind, Network};
use crate::numerics::{Bound, DenseArray, ParameterStore, Tape, Var};
use crate::{Error, Result};

const CONV_K: &str = "conv.kernel";
const CONV_B: &str = "conv.bias";
const HEAD_K: &str = "head.kernel";
const HEAD_B: &str = "head.bias";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CnnConfig {
    pub rows: usize,
    pub cols: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub filters: usize,
    /// Odd spatial kernel size.
    pub kernel: usize,
}

impl CnnConfig {
    pub fn new(rows: usize, cols: usize, lookback: usize, horizon: usize) -> Self {
        Self {
            rows,
            cols,
            lookback,
            horizon,
            filters: 16,
            kernel: 3,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.kernel.is_multiple_of(2) {
            return Err(Error::InvalidInput(format!(
                "kernel size must be odd, got {}",
                self.kernel
            )));
        }
        if self.rows == 0 || self.cols == 0 || self.lookback == 0 || self.horizon == 0 || self.filters == 0 {
            return Err(Error::InvalidInput("CNN dimensions must be ≥ 1".into()));
        }
        Ok(())
    }
}

fn init_conv(
    store: &mut ParameterStore,
    names: (&str, &str),
    out_ch: usize,
    in_ch: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let area = k * k;
    store.insert_glorot(names.0, [out_ch, in_ch, k, k], in_ch * area, out_ch * area, rng)?;
    store.insert(names.1, DenseArray::zeros([out_ch]))
}

#[derive(Debug, Clone)]
pub struct Cnn {
    config: CnnConfig,
}

impl Cnn {
    pub fn new(config: CnnConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }
}

impl Network for Cnn {
    fn kind(&self) -> ModelKind {
        ModelKind::Cnn
    }

    fn input_shape(&self) -> Vec<usize> {
        vec![self.config.lookback, self.config.rows, self.config.cols]
    }

    fn output_shape(&self) -> Vec<usize> {
        vec![self.config.horizon, self.config.rows, self.config.cols]
    }

    fn init_params_with(&self, rng: &mut ChaCha8Rng) -> Result<ParameterStore> {
        let c = &self.config;
        let mut store = ParameterStore::new();
        init_conv(&mut store, (CONV_K, CONV_B), c.filters, c.lookback, c.kernel, rng)?;
        init_conv(&mut store, (HEAD_K, HEAD_B), c.horizon, c.filters, 1, rng)?;
        Ok(store)
    }

    fn forward(&self, tape: &mut Tape, params: &Bound, input: Var) -> Result<Var> {
        check_batch("cnn input", tape.value(input).shape(), &self.input_shape())?;
        let h = tape.conv2d(input, params.var(CONV_K)?, Some(params.var(CONV_B)?))?;
        let h = tape.relu(h);
        tape.conv2d(h, params.var(HEAD_K)?, Some(params.var(HEAD_B)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CnnLstmConfig {
    pub cnn: CnnConfig,
    pub hidden: usize,
}

impl CnnLstmConfig {
    pub fn new(rows: usize, cols: usize, lookback: usize, horizon: usize) -> Self {
        Self {
            cnn: CnnConfig::new(rows, cols, lookback, horizon),
            hidden: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CnnLstm {
    config: CnnLstmConfig,
    lstm: LstmParams,
}

impl CnnLstm {
    pub fn new(config: CnnLstmConfig) -> Result<Self> {
        config.cnn.validate()?;
        Ok(Self {
            config,
            lstm: LstmParams::new("lstm"),
        })
    }
}

impl Network for CnnLstm {
    fn kind(&self) -> ModelKind {
        ModelKind::CnnLstm
    }

    fn input_shape(&self) -> Vec<usize> {
        let c = &self.config.cnn;
        vec![c.lookback, c.rows, c.cols]
    }

    fn output_shape(&self) -> Vec<usize> {
        let c = &self.config.cnn;
        vec![c.horizon, c.rows, c.cols]
    }

    fn init_params_with(&self, rng: &mut ChaCha8Rng) -> Result<ParameterStore> {
        let c = &self.config.cnn;
        let cells = c.rows * c.cols;
        let mut store = ParameterStore::new();
        init_conv(&mut store, (CONV_K, CONV_B), c.filters, 1, c.kernel, rng)?;
        self.lstm
            .init(&mut store, c.filters * cells, self.config.hidden, rng)?;
        init_readout(&mut store, self.config.hidden, c.horizon * cells, rng)?;
        Ok(store)
    }

    fn forward(&self, tape: &mut Tape, params: &Bound, input: Var) -> Result<Var> {
        let c = &self.config.cnn;
        let batch = check_batch("cnn_lstm input", tape.value(input).shape(), &self.input_shape())?;
        let (kernel, bias) = (params.var(CONV_K)?, params.var(CONV_B)?);
        let mut state = LstmState::zeros(tape, batch, self.config.hidden);
        for lag in 0..c.lookback {
            let x = tape.slice(input, 1, lag, 1)?;
            let f = tape.conv2d(x, kernel, Some(bias))?;
            let f = tape.relu(f);
            let f = tape.reshape(f, [batch, c.filters * c.rows * c.cols])?;
            state = self.lstm.cell(tape, params, f, state)?;
        }
        let y = readout(tape, params, state.h)?;
        tape.reshape(y, [batch, c.horizon, c.rows, c.cols])
    }
}
