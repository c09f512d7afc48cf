//! LSTM cell recorded on a tape.
//!
//! Input projections are stored as `(input, hidden)` matrices so a batch of
//! row vectors `x` maps through `x · W`; recurrent matrices are
//! `(hidden, hidden)` and biases have length `hidden`.

use rand::Rng;

use crate::numerics::{Bound, DenseArray, ParameterStore, Tape, Var};
use crate::Result;

const GATES: [&str; 4] = ["i", "f", "o", "c"];

/// Parameter names `{prefix}.w_{g}`, `{prefix}.u_{g}`, `{prefix}.b_{g}` for
/// gates input, forget, output and candidate.
#[derive(Debug, Clone)]
pub struct LstmParams {
    prefix: String,
}

/// Hidden and cell state for a batch: both `(batch, hidden)`.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    /// `h_0 = 0`, `c_0 = 0`.
    pub fn zeros(tape: &mut Tape, batch: usize, hidden: usize) -> Self {
        Self {
            h: tape.constant(DenseArray::zeros([batch, hidden])),
            c: tape.constant(DenseArray::zeros([batch, hidden])),
        }
    }
}

struct Gate {
    w: Var,
    u: Var,
    b: Var,
}

impl LstmParams {
    pub fn new(prefix: impl Into<String>) -> Self {
        Self {
            prefix: prefix.into(),
        }
    }

    pub fn name(&self, kind: char, gate: &str) -> String {
        format!("{}.{kind}_{gate}", self.prefix)
    }

    /// Glorot-uniform `W`/`U`, zero biases except the forget gate at 1.0.
    pub fn init<R: Rng + ?Sized>(
        &self,
        store: &mut ParameterStore,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<()> {
        for g in GATES {
            store.insert_glorot(self.name('w', g), [input, hidden], input, hidden, rng)?;
            store.insert_glorot(self.name('u', g), [hidden, hidden], hidden, hidden, rng)?;
            let b = if g == "f" { 1.0 } else { 0.0 };
            store.insert(self.name('b', g), DenseArray::full([hidden], b))?;
        }
        Ok(())
    }

    fn gate(&self, params: &Bound, g: &str) -> Result<Gate> {
        Ok(Gate {
            w: params.var(&self.name('w', g))?,
            u: params.var(&self.name('u', g))?,
            b: params.var(&self.name('b', g))?,
        })
    }

    fn preactivation(&self, tape: &mut Tape, gate: &Gate, x: Var, h: Var) -> Result<Var> {
        let wx = tape.matmul(x, gate.w)?;
        let uh = tape.matmul(h, gate.u)?;
        let s = tape.add(wx, uh)?;
        tape.bias_add(s, gate.b)
    }

    /// One step: sigmoid gates, tanh candidate and output squashing.
    pub fn cell(&self, tape: &mut Tape, params: &Bound, x: Var, state: LstmState) -> Result<LstmState> {
        let [gi, gf, go, gc] = GATES.map(|g| self.gate(params, g));
        let (gi, gf, go, gc) = (gi?, gf?, go?, gc?);
        let i = self.preactivation(tape, &gi, x, state.h)?;
        let i = tape.sigmoid(i);
        let f = self.preactivation(tape, &gf, x, state.h)?;
        let f = tape.sigmoid(f);
        let o = self.preactivation(tape, &go, x, state.h)?;
        let o = tape.sigmoid(o);
        let cand = self.preactivation(tape, &gc, x, state.h)?;
        let cand = tape.tanh(cand);
        let keep = tape.mul(f, state.c)?;
        let write = tape.mul(i, cand)?;
        let c = tape.add(keep, write)?;
        let squashed = tape.tanh(c);
        let h = tape.mul(o, squashed)?;
        Ok(LstmState { h, c })
    }
}
