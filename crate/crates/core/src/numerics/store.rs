use std::fmt::Write as _;

use indexmap::IndexMap;
use rand::Rng;

use super::array::DenseArray;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    value: DenseArray,
    grad: DenseArray,
}

/// Named trainable arrays with same-shape gradient slots, iterated in
/// insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    slots: IndexMap<String, Slot>,
}

/// Per-parameter gradients in [`ParameterStore`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(Vec<DenseArray>);

impl Gradients {
    pub(crate) fn new(grads: Vec<DenseArray>) -> Self {
        Self(grads)
    }

    pub fn as_slice(&self) -> &[DenseArray] {
        &self.0
    }

    /// Elementwise sum; shapes must agree.
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
    }
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: DenseArray) -> Result<()> {
        let name = name.into();
        if self.slots.contains_key(&name) {
            return Err(Error::InvalidInput(format!("duplicate parameter '{name}'")));
        }
        let grad = DenseArray::zeros(value.shape().to_vec());
        self.slots.insert(name, Slot { value, grad });
        Ok(())
    }

    /// Glorot-uniform weights: `U[-b, b]` with `b = √(6 / (fan_in + fan_out))`.
    pub fn insert_glorot<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: impl Into<Vec<usize>>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<()> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.insert(name, DenseArray::uniform(shape, bound, rng))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    /// `(name, value, grad)` in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseArray, &DenseArray)> {
        self.slots
            .iter()
            .map(|(k, s)| (k.as_str(), &s.value, &s.grad))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&mut DenseArray, &DenseArray)> {
        self.slots.values_mut().map(|s| (&mut s.value, &s.grad))
    }

    pub fn value(&self, name: &str) -> Result<&DenseArray> {
        self.slot(name).map(|s| &s.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut DenseArray> {
        self.slots
            .get_mut(name)
            .map(|s| &mut s.value)
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter '{name}'")))
    }

    pub fn grad(&self, name: &str) -> Result<&DenseArray> {
        self.slot(name).map(|s| &s.grad)
    }

    fn slot(&self, name: &str) -> Result<&Slot> {
        self.slots
            .get(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter '{name}'")))
    }

    pub fn zero_grads(&mut self) {
        for slot in self.slots.values_mut() {
            slot.grad.data_mut().fill(0.0);
        }
    }

    pub fn accumulate_grads(&mut self, grads: &Gradients) -> Result<()> {
        if grads.0.len() != self.slots.len() {
            return Err(Error::Tape(format!(
                "gradient count {} does not match parameter count {}",
                grads.0.len(),
                self.slots.len()
            )));
        }
        for (slot, g) in self.slots.values_mut().zip(&grads.0) {
            if slot.grad.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "accumulate_grads",
                    lhs: slot.grad.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            slot.grad.add_assign(g);
        }
        Ok(())
    }

    /// Σ over every parameter of Σ β².
    pub fn sum_squares(&self) -> f64 {
        self.slots.values().map(|s| s.value.sum_squares()).sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }

    /// Checkpoint text: one `name,dims,values` line per parameter, where
    /// `dims` joins the shape with `x` (empty for scalars) and `values` is a
    /// space-separated list printed with 17 significant digits, so a
    /// round trip through [`ParameterStore::from_checkpoint`] is bit-exact.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::from("name,shape,values\n");
        for (name, slot) in &self.slots {
            let dims: Vec<String> = slot.value.shape().iter().map(usize::to_string).collect();
            let _ = write!(out, "{name},{},", dims.join("x"));
            for (i, v) in slot.value.data().iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{v:.16e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some("name,shape,values") => {}
            other => {
                return Err(Error::Checkpoint(format!(
                    "unexpected checkpoint header {other:?}"
                )))
            }
        }
        let mut store = Self::new();
        for (lineno, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let bad = |what: &str| Error::Checkpoint(format!("line {}: {what}", lineno + 2));
            let mut parts = line.splitn(3, ',');
            let (Some(name), Some(dims), Some(values)) = (parts.next(), parts.next(), parts.next())
            else {
                return Err(bad("expected name,shape,values"));
            };
            let shape = if dims.is_empty() {
                vec![]
            } else {
                dims.split('x')
                    .map(|d| d.parse::<usize>().map_err(|_| bad("bad dimension")))
                    .collect::<Result<Vec<_>>>()?
            };
            let data = values
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| bad("bad value")))
                .collect::<Result<Vec<_>>>()?;
            let value = DenseArray::new(shape, data).map_err(|e| bad(&e.to_string()))?;
            store.insert(name, value)?;
        }
        Ok(store)
    }
}
