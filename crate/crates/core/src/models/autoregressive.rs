//! AR(p) on a single series and VAR(p) on a multivariate series, both fit
//! by ridge-stabilised normal equations.
//!
//! The ridge term is relative: `jitter · mean(diag(XᵀX))` is added to the
//! Gram diagonal, so the fit does not depend on the units of the data.

use nalgebra::DMatrix;

use crate::numerics::{DenseArray, ParameterStore};
use crate::{Error, Result};

/// Default relative ridge for AR fits.
pub const AR_JITTER: f64 = 1e-8;
/// Default relative ridge for VAR fits, where regressors can outnumber samples.
pub const VAR_JITTER: f64 = 1e-4;

/// Solves `(XᵀX + λI) B = XᵀY` for `B` (`q × k`), with `X` `m × q` and `Y`
/// `m × k`, both row-major.
fn ridge_solve(x: &[f64], y: &[f64], m: usize, q: usize, k: usize, jitter: f64) -> Result<DMatrix<f64>> {
    use crate::numerics::DenseArray as A;
    let xs = A::new([m, q], x.to_vec())?;
    let ys = A::new([m, k], y.to_vec())?;
    let xt = xs.transpose()?;
    let gram = xt.matmul(&xs)?;
    let rhs = xt.matmul(&ys)?;

    let mut g = DMatrix::from_row_slice(q, q, gram.data());
    if jitter > 0.0 {
        let mean_diag = (0..q).map(|i| g[(i, i)]).sum::<f64>() / q as f64;
        let lambda = jitter * mean_diag.max(f64::MIN_POSITIVE);
        for i in 0..q {
            g[(i, i)] += lambda;
        }
    }
    let chol = g.cholesky().ok_or_else(|| {
        Error::Singular(format!(
            "normal equations ({q} regressors, {m} samples) are not positive definite; \
             a ridge jitter > 0 is required"
        ))
    })?;
    Ok(chol.solve(&DMatrix::from_row_slice(q, k, rhs.data())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArModel {
    pub intercept: f64,
    /// `coefs[l]` multiplies `x_{t−1−l}`.
    pub coefs: Vec<f64>,
}

pub fn ar_fit(series: &[f64], order: usize, jitter: f64) -> Result<ArModel> {
    if order == 0 {
        return Err(Error::InvalidInput("AR order must be ≥ 1".into()));
    }
    if series.len() <= order {
        return Err(Error::SeriesTooShort {
            required: order + 1,
            actual: series.len(),
        });
    }
    let m = series.len() - order;
    let q = order + 1;
    let mut x = Vec::with_capacity(m * q);
    for t in order..series.len() {
        x.push(1.0);
        x.extend((1..=order).map(|l| series[t - l]));
    }
    let beta = ridge_solve(&x, &series[order..], m, q, 1, jitter)?;
    Ok(ArModel {
        intercept: beta[(0, 0)],
        coefs: (1..q).map(|i| beta[(i, 0)]).collect(),
    })
}

impl ArModel {
    pub fn order(&self) -> usize {
        self.coefs.len()
    }

    /// One-step prediction from the most recent `order` values of `history`.
    pub fn step(&self, history: &[f64]) -> f64 {
        let n = history.len();
        self.intercept
            + self
                .coefs
                .iter()
                .enumerate()
                .map(|(l, c)| c * history[n - 1 - l])
                .sum::<f64>()
    }

    /// Recursive multi-step forecast: each prediction feeds the next lag vector.
    pub fn predict(&self, history: &[f64], steps: usize) -> Result<Vec<f64>> {
        let p = self.order();
        if history.len() < p {
            return Err(Error::SeriesTooShort {
                required: p,
                actual: history.len(),
            });
        }
        let mut buf = history[history.len() - p..].to_vec();
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            let next = self.step(&buf);
            buf.push(next);
            out.push(next);
        }
        Ok(out)
    }

    pub fn to_store(&self) -> Result<ParameterStore> {
        let mut s = ParameterStore::new();
        s.insert("ar.intercept", DenseArray::scalar(self.intercept))?;
        s.insert("ar.coef", DenseArray::new([self.order()], self.coefs.clone())?)?;
        Ok(s)
    }

    pub fn from_store(store: &ParameterStore) -> Result<Self> {
        Ok(Self {
            intercept: store.value("ar.intercept")?.item(),
            coefs: store.value("ar.coef")?.data().to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarModel {
    order: usize,
    intercepts: Vec<f64>,
    /// `k × (order·k)`: entry `[i, l·k + j]` multiplies series `j` at lag `l + 1`
    /// in the equation for series `i`.
    coefs: DenseArray,
}

/// Fits every equation on all series' `order` lags. `series` is `len × k`.
pub fn var_fit(series: &DenseArray, order: usize, jitter: f64) -> Result<VarModel> {
    if series.ndim() != 2 {
        return Err(Error::InvalidInput("VAR needs a 2-D series".into()));
    }
    if order == 0 {
        return Err(Error::InvalidInput("VAR order must be ≥ 1".into()));
    }
    let (len, k) = (series.shape()[0], series.shape()[1]);
    if len <= order {
        return Err(Error::SeriesTooShort {
            required: order + 1,
            actual: len,
        });
    }
    let m = len - order;
    let q = 1 + order * k;
    let row = |t: usize| &series.data()[t * k..(t + 1) * k];
    let mut x = Vec::with_capacity(m * q);
    let mut y = Vec::with_capacity(m * k);
    for t in order..len {
        x.push(1.0);
        for l in 1..=order {
            x.extend_from_slice(row(t - l));
        }
        y.extend_from_slice(row(t));
    }
    let beta = ridge_solve(&x, &y, m, q, k, jitter)?;
    let intercepts = (0..k).map(|i| beta[(0, i)]).collect();
    let mut coefs = DenseArray::zeros([k, order * k]);
    for i in 0..k {
        for r in 1..q {
            coefs.set2(i, r - 1, beta[(r, i)]);
        }
    }
    Ok(VarModel {
        order,
        intercepts,
        coefs,
    })
}

impl VarModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn n_series(&self) -> usize {
        self.intercepts.len()
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.intercepts
    }

    /// Coefficient on series `j` at lag `lag` (1-based) in equation `i`.
    pub fn coef(&self, i: usize, lag: usize, j: usize) -> f64 {
        self.coefs.at2(i, (lag - 1) * self.n_series() + j)
    }

    /// Recursive multi-step forecast from the last `order` rows of
    /// `history` (`len × k`); returns `steps × k`.
    pub fn predict(&self, history: &DenseArray, steps: usize) -> Result<DenseArray> {
        let k = self.n_series();
        if history.ndim() != 2 || history.shape()[1] != k {
            return Err(Error::ShapeMismatch {
                op: "var_predict",
                lhs: history.shape().to_vec(),
                rhs: vec![self.order, k],
            });
        }
        let len = history.shape()[0];
        if len < self.order {
            return Err(Error::SeriesTooShort {
                required: self.order,
                actual: len,
            });
        }
        let mut buf: Vec<f64> = history.data()[(len - self.order) * k..].to_vec();
        let mut out = Vec::with_capacity(steps * k);
        for _ in 0..steps {
            let rows = buf.len() / k;
            let next: Vec<f64> = (0..k)
                .map(|i| {
                    let mut acc = self.intercepts[i];
                    for l in 1..=self.order {
                        let lagged = &buf[(rows - l) * k..(rows - l + 1) * k];
                        for (j, v) in lagged.iter().enumerate() {
                            acc += self.coef(i, l, j) * v;
                        }
                    }
                    acc
                })
                .collect();
            buf.extend_from_slice(&next);
            out.extend(next);
        }
        DenseArray::new([steps, k], out)
    }

    pub fn to_store(&self) -> Result<ParameterStore> {
        let mut s = ParameterStore::new();
        s.insert("var.intercept", DenseArray::new([self.n_series()], self.intercepts.clone())?)?;
        s.insert("var.coef", self.coefs.clone())?;
        Ok(s)
    }

    pub fn from_store(store: &ParameterStore) -> Result<Self> {
        let intercepts = store.value("var.intercept")?.data().to_vec();
        let coefs = store.value("var.coef")?.clone();
        let k = intercepts.len();
        if coefs.ndim() != 2 || coefs.shape()[0] != k || k == 0 || coefs.shape()[1] % k != 0 {
            return Err(Error::Checkpoint(format!(
                "VAR coefficient shape {:?} does not fit {k} series",
                coefs.shape()
            )));
        }
        Ok(Self {
            order: coefs.shape()[1] / k,
            intercepts,
            coefs,
        })
    }
}
