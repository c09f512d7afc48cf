//! Reverse-mode gradient tape over [`DenseArray`] values.
//!
//! Each forward pass records its primitives on a fresh [`Tape`]; nodes are
//! appended in evaluation order, so reverse index order is a valid
//! topological order for the backward sweep. A tape can be differentiated
//! exactly once.

use indexmap::IndexMap;

use super::array::{gemm, DenseArray, Operand};
use super::store::{Gradients, ParameterStore};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum MatMulKind {
    /// (m,k)·(k,n)
    Plain,
    /// (m,k)·(b,k,n): left operand shared across the batch.
    SharedLeft,
    /// (b,m,k)·(k,n): right operand shared across the batch.
    SharedRight,
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var, MatMulKind),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    BiasAdd(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Abs(Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
    },
    Reshape(Var),
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: DenseArray,
    op: Op,
    requires_grad: bool,
}

/// Parameters of a [`ParameterStore`] bound as leaves of one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Tape(format!("parameter '{name}' is not bound")))
    }

    pub fn vars(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_shapes: Vec<Vec<usize>>,
    consumed: bool,
}

fn shape_err(op: &'static str, lhs: &DenseArray, rhs: &DenseArray) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: lhs.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DenseArray {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: DenseArray, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a value that gradients do not flow into.
    pub fn constant(&mut self, value: DenseArray) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Binds every parameter of `store` as a differentiable leaf.
    pub fn bind(&mut self, store: &ParameterStore) -> Bound {
        self.param_shapes = store
            .iter()
            .map(|(_, value, _)| value.shape().to_vec())
            .collect();
        let vars = store
            .iter()
            .enumerate()
            .map(|(i, (name, value, _))| {
                let var = self.push(value.clone(), Op::Param(i), true);
                (name.to_string(), var)
            })
            .collect();
        Bound { vars }
    }

    /// Matrix product with numpy-style broadcasting of a shared 2-D operand.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        let (kind, out_shape) = match (sa.len(), sb.len()) {
            (2, 2) if sa[1] == sb[0] => (MatMulKind::Plain, vec![sa[0], sb[1]]),
            (2, 3) if sa[1] == sb[1] => (MatMulKind::SharedLeft, vec![sb[0], sa[0], sb[2]]),
            (3, 2) if sa[2] == sb[0] => (MatMulKind::SharedRight, vec![sa[0], sa[1], sb[1]]),
            _ => return Err(shape_err("matmul", av, bv)),
        };
        let mut out = DenseArray::zeros(out_shape);
        match kind {
            MatMulKind::Plain => {
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                gemm(
                    m,
                    k,
                    n,
                    Operand::new(av.data(), k, false),
                    Operand::new(bv.data(), n, false),
                    out.data_mut(),
                    false,
                );
            }
            MatMulKind::SharedLeft => {
                let (batch, m, k, n) = (sb[0], sa[0], sa[1], sb[2]);
                let od = out.data_mut();
                for i in 0..batch {
                    gemm(
                        m,
                        k,
                        n,
                        Operand::new(av.data(), k, false),
                        Operand::new(&bv.data()[i * k * n..(i + 1) * k * n], n, false),
                        &mut od[i * m * n..(i + 1) * m * n],
                        false,
                    );
                }
            }
            MatMulKind::SharedRight => {
                let (m, k, n) = (sa[0] * sa[1], sa[2], sb[1]);
                gemm(
                    m,
                    k,
                    n,
                    Operand::new(av.data(), k, false),
                    Operand::new(bv.data(), n, false),
                    out.data_mut(),
                    false,
                );
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b, kind), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(op, av, bv));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, factor), rg)
    }

    /// Adds a 1-D bias along the last axis of `x`.
    pub fn bias_add(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let width = *xv.shape().last().unwrap_or(&0);
        if bv.ndim() != 1 || bv.len() != width || width == 0 {
            return Err(shape_err("bias_add", xv, bv));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(width) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::BiasAdd(x, bias), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(out, op, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    /// Stride-1 "same"-padded 2-D cross-correlation.
    ///
    /// `input` is `(batch, in_ch, h, w)`, `kernel` is `(out_ch, in_ch, kh, kw)`
    /// with odd `kh`, `kw`; `bias` (if any) has length `out_ch`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let (iv, kv) = (self.value(input), self.value(kernel));
        let geo = ConvGeometry::new(iv.shape(), kv.shape())
            .ok_or_else(|| shape_err("conv2d", iv, kv))?;
        if let Some(b) = bias {
            let bv = self.value(b);
            if bv.ndim() != 1 || bv.len() != geo.out_ch {
                return Err(shape_err("conv2d bias", kv, bv));
            }
        }
        let mut out = DenseArray::zeros([geo.batch, geo.out_ch, geo.h, geo.w]);
        let mut cols = vec![0.0; geo.patch() * geo.hw()];
        let in_block = geo.in_ch * geo.hw();
        let out_block = geo.out_ch * geo.hw();
        for bi in 0..geo.batch {
            geo.im2col(&iv.data()[bi * in_block..(bi + 1) * in_block], &mut cols);
            gemm(
                geo.out_ch,
                geo.patch(),
                geo.hw(),
                Operand::new(kv.data(), geo.patch(), false),
                Operand::new(&cols, geo.hw(), false),
                &mut out.data_mut()[bi * out_block..(bi + 1) * out_block],
                false,
            );
        }
        if let Some(b) = bias {
            let bias_vals = self.value(b).data().to_vec();
            for plane in out.data_mut().chunks_mut(geo.hw()).enumerate() {
                let ch = plane.0 % geo.out_ch;
                plane.1.iter_mut().for_each(|x| *x += bias_vals[ch]);
            }
        }
        let rg = self.rg(input) || self.rg(kernel) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// `[start, start + len)` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let shape = av.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::ShapeMismatch {
                op: "slice",
                lhs: shape.to_vec(),
                rhs: vec![axis, start, len],
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            data.extend_from_slice(&av.data()[base..base + len * inner]);
        }
        let out = DenseArray::new(out_shape, data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Slice { input: a, axis, start }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = DenseArray::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = DenseArray::scalar(v.sum() / v.len().max(1) as f64);
        let rg = self.rg(a);
        self.push(out, Op::Mean(a), rg)
    }

    /// Reverse sweep from the scalar `loss`; returns one gradient per bound
    /// parameter (zeros for parameters the loss does not depend on).
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Tape("backward called before any forward pass".into()));
        }
        if self.consumed {
            return Err(Error::Tape(
                "backward already ran on this tape; record a new forward pass".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Tape(format!(
                "loss must be a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;

        let mut param_grads: Vec<DenseArray> = self
            .param_shapes
            .iter()
            .map(|s| DenseArray::zeros(s.clone()))
            .collect();
        let mut grads: Vec<Option<DenseArray>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(DenseArray::full(self.value(loss).shape().to_vec(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Param(p) = node.op {
                param_grads[p].add_assign(&g);
                continue;
            }
            for (input, ig) in self.local_grads(idx, &g)? {
                if !self.rg(input) {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(existing) => existing.add_assign(&ig),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Ok(Gradients::new(param_grads))
    }

    /// Runs [`Tape::backward`] and adds the result into the store's
    /// gradient slots.
    pub fn backward_into(&mut self, loss: Var, store: &mut ParameterStore) -> Result<()> {
        let grads = self.backward(loss)?;
        store.accumulate_grads(&grads)
    }

    /// Vector-Jacobian products of node `idx` for upstream gradient `g`.
    fn local_grads(&self, idx: usize, g: &DenseArray) -> Result<Vec<(Var, DenseArray)>> {
        let node = &self.nodes[idx];
        let val = |v: Var| self.value(v);
        let out = match node.op {
            Op::Constant | Op::Param(_) => vec![],
            Op::Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
            Op::Sub(a, b) => vec![(a, g.clone()), (b, g.map(|x| -x))],
            Op::Mul(a, b) => vec![
                (a, g.zip_map(val(b), |d, y| d * y)),
                (b, g.zip_map(val(a), |d, x| d * x)),
            ],
            Op::Scale(a, f) => vec![(a, g.map(|x| x * f))],
            Op::BiasAdd(x, b) => {
                let width = val(b).len();
                let mut gb = DenseArray::zeros([width]);
                for row in g.data().chunks(width) {
                    for (acc, d) in gb.data_mut().iter_mut().zip(row) {
                        *acc += d;
                    }
                }
                vec![(x, g.clone()), (b, gb)]
            }
            Op::Sigmoid(a) => vec![(a, g.zip_map(&node.value, |d, y| d * y * (1.0 - y)))],
            Op::Tanh(a) => vec![(a, g.zip_map(&node.value, |d, y| d * (1.0 - y * y)))],
            Op::Relu(a) => vec![(a, g.zip_map(val(a), |d, x| if x > 0.0 { d } else { 0.0 }))],
            Op::Abs(a) => vec![(a, g.zip_map(val(a), |d, x| d * sign(x)))],
            Op::Reshape(a) => vec![(a, g.clone().reshape(val(a).shape().to_vec())?)],
            Op::Slice { input, axis, start } => {
                let shape = val(input).shape();
                let outer: usize = shape[..axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let len = g.shape()[axis];
                let mut gi = DenseArray::zeros(shape.to_vec());
                let chunk = len * inner;
                for o in 0..outer {
                    let base = (o * shape[axis] + start) * inner;
                    gi.data_mut()[base..base + chunk]
                        .copy_from_slice(&g.data()[o * chunk..(o + 1) * chunk]);
                }
                vec![(input, gi)]
            }
            Op::Sum(a) => vec![(a, DenseArray::full(val(a).shape().to_vec(), g.item()))],
            Op::Mean(a) => {
                let n = val(a).len().max(1) as f64;
                vec![(a, DenseArray::full(val(a).shape().to_vec(), g.item() / n))]
            }
            Op::MatMul(a, b, kind) => self.matmul_grads(a, b, kind, g),
            Op::Conv2d {
                input,
                kernel,
                bias,
            } => self.conv_grads(input, kernel, bias, g),
        };
        Ok(out)
    }

    fn matmul_grads(&self, a: Var, b: Var, kind: MatMulKind, g: &DenseArray) -> Vec<(Var, DenseArray)> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        let mut ga = DenseArray::zeros(sa.to_vec());
        let mut gb = DenseArray::zeros(sb.to_vec());
        let (need_a, need_b) = (self.rg(a), self.rg(b));
        match kind {
            MatMulKind::Plain | MatMulKind::SharedRight => {
                let k = *sa.last().unwrap();
                let m = av.len() / k;
                let n = sb[1];
                if need_a {
                    // dA = dC · Bᵀ
                    gemm(
                        m,
                        n,
                        k,
                        Operand::new(g.data(), n, false),
                        Operand::new(bv.data(), n, true),
                        ga.data_mut(),
                        false,
                    );
                }
                if need_b {
                    // dB = Aᵀ · dC
                    gemm(
                        k,
                        m,
                        n,
                        Operand::new(av.data(), k, true),
                        Operand::new(g.data(), n, false),
                        gb.data_mut(),
                        false,
                    );
                }
            }
            MatMulKind::SharedLeft => {
                let (batch, m, k, n) = (sb[0], sa[0], sa[1], sb[2]);
                for i in 0..batch {
                    let gi = &g.data()[i * m * n..(i + 1) * m * n];
                    let bi = &bv.data()[i * k * n..(i + 1) * k * n];
                    if need_a {
                        gemm(
                            m,
                            n,
                            k,
                            Operand::new(gi, n, false),
                            Operand::new(bi, n, true),
                            ga.data_mut(),
                            true,
                        );
                    }
                    if need_b {
                        gemm(
                            k,
                            m,
                            n,
                            Operand::new(av.data(), k, true),
                            Operand::new(gi, n, false),
                            &mut gb.data_mut()[i * k * n..(i + 1) * k * n],
                            false,
                        );
                    }
                }
            }
        }
        vec![(a, ga), (b, gb)]
    }

    fn conv_grads(&self, input: Var, kernel: Var, bias: Option<Var>, g: &DenseArray) -> Vec<(Var, DenseArray)> {
        let (iv, kv) = (self.value(input), self.value(kernel));
        let geo = ConvGeometry::new(iv.shape(), kv.shape()).expect("validated in forward");
        let mut gi = DenseArray::zeros(iv.shape().to_vec());
        let mut gk = DenseArray::zeros(kv.shape().to_vec());
        let mut cols = vec![0.0; geo.patch() * geo.hw()];
        let mut gcols = vec![0.0; geo.patch() * geo.hw()];
        let in_block = geo.in_ch * geo.hw();
        let out_block = geo.out_ch * geo.hw();
        for bi in 0..geo.batch {
            let go = &g.data()[bi * out_block..(bi + 1) * out_block];
            if self.rg(kernel) {
                geo.im2col(&iv.data()[bi * in_block..(bi + 1) * in_block], &mut cols);
                // dK += dOut · colsᵀ
                gemm(
                    geo.out_ch,
                    geo.hw(),
                    geo.patch(),
                    Operand::new(go, geo.hw(), false),
                    Operand::new(&cols, geo.hw(), true),
                    gk.data_mut(),
                    true,
                );
            }
            if self.rg(input) {
                // dcols = Kᵀ · dOut, scattered back with col2im
                gemm(
                    geo.patch(),
                    geo.out_ch,
                    geo.hw(),
                    Operand::new(kv.data(), geo.patch(), true),
                    Operand::new(go, geo.hw(), false),
                    &mut gcols,
                    false,
                );
                geo.col2im(&gcols, &mut gi.data_mut()[bi * in_block..(bi + 1) * in_block]);
            }
        }
        let mut out = vec![(input, gi), (kernel, gk)];
        if let Some(b) = bias {
            let mut gb = DenseArray::zeros([geo.out_ch]);
            for (p, plane) in g.data().chunks(geo.hw()).enumerate() {
                gb.data_mut()[p % geo.out_ch] += plane.iter().sum::<f64>();
            }
            out.push((b, gb));
        }
        out
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

struct ConvGeometry {
    batch: usize,
    in_ch: usize,
    out_ch: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
}

impl ConvGeometry {
    fn new(input: &[usize], kernel: &[usize]) -> Option<Self> {
        if input.len() != 4 || kernel.len() != 4 || input[1] != kernel[1] {
            return None;
        }
        if kernel[2].is_multiple_of(2) || kernel[3].is_multiple_of(2) {
            return None;
        }
        Some(Self {
            batch: input[0],
            in_ch: input[1],
            out_ch: kernel[0],
            h: input[2],
            w: input[3],
            kh: kernel[2],
            kw: kernel[3],
        })
    }

    fn hw(&self) -> usize {
        self.h * self.w
    }

    fn patch(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    /// Row `(c, dy, dx)` of `cols` holds the input pixel each output pixel
    /// sees at that kernel tap (zero outside the image).
    fn im2col(&self, image: &[f64], cols: &mut [f64]) {
        let (ph, pw) = ((self.kh / 2) as isize, (self.kw / 2) as isize);
        let hw = self.hw();
        for c in 0..self.in_ch {
            for dy in 0..self.kh {
                for dx in 0..self.kw {
                    let row = (c * self.kh + dy) * self.kw + dx;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    for y in 0..self.h {
                        let sy = y as isize + dy as isize - ph;
                        for x in 0..self.w {
                            let sx = x as isize + dx as isize - pw;
                            dst[y * self.w + x] = if sy >= 0
                                && sx >= 0
                                && (sy as usize) < self.h
                                && (sx as usize) < self.w
                            {
                                image[c * hw + sy as usize * self.w + sx as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], image: &mut [f64]) {
        let (ph, pw) = ((self.kh / 2) as isize, (self.kw / 2) as isize);
        let hw = self.hw();
        for c in 0..self.in_ch {
            for dy in 0..self.kh {
                for dx in 0..self.kw {
                    let row = (c * self.kh + dy) * self.kw + dx;
                    let src = &cols[row * hw..(row + 1) * hw];
                    for y in 0..self.h {
                        let sy = y as isize + dy as isize - ph;
                        if sy < 0 || sy as usize >= self.h {
                            continue;
                        }
                        for x in 0..self.w {
                            let sx = x as isize + dx as isize - pw;
                            if sx < 0 || sx as usize >= self.w {
                                continue;
                            }
                            image[c * hw + sy as usize * self.w + sx as usize] += src[y * self.w + x];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn arr(shape: &[usize], data: &[f64]) -> DenseArray {
        DenseArray::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_sigmoid_points() {
        let mut t = Tape::new();
        let x = t.constant(arr(&[3], &[-1.0, 0.0, 2.0]));
        let r = t.relu(x);
        assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = t.constant(DenseArray::scalar(0.0));
        let s = t.sigmoid(z);
        assert_eq!(t.value(s).item(), 0.5);
        assert!((sigmoid(-800.0)).is_finite() && sigmoid(800.0) == 1.0);
    }

    #[test]
    fn sum_of_param_gives_ones() {
        let mut store = ParameterStore::new();
        store.insert("w", arr(&[2, 2], &[1.0, -2.0, 3.0, 0.5])).unwrap();
        let mut t = Tape::new();
        let b = t.bind(&store);
        let w = b.var("w").unwrap();
        let loss = t.sum(w);
        t.backward_into(loss, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn hadamard_square_gives_two_w() {
        let mut store = ParameterStore::new();
        let w0 = arr(&[2, 2], &[1.0, -2.0, 3.0, 0.5]);
        store.insert("w", w0.clone()).unwrap();
        let mut t = Tape::new();
        let b = t.bind(&store);
        let w = b.var("w").unwrap();
        let sq = t.mul(w, w).unwrap();
        let loss = t.sum(sq);
        t.backward_into(loss, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap(), &w0.map(|x| 2.0 * x));
    }

    #[test]
    fn backward_lifetime_rules() {
        let mut empty = Tape::new();
        assert!(matches!(empty.backward(Var(0)), Err(Error::Tape(_))));

        let mut store = ParameterStore::new();
        store.insert("w", arr(&[2], &[1.0, 2.0])).unwrap();
        let mut t = Tape::new();
        let b = t.bind(&store);
        let w = b.var("w").unwrap();
        assert!(t.backward(w).is_err(), "non-scalar loss");
        let loss = t.sum(w);
        t.backward(loss).unwrap();
        let again = t.backward(loss).unwrap_err().to_string();
        assert!(again.contains("already ran"));
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(DenseArray::zeros([2, 3]));
        let b = t.constant(DenseArray::zeros([2, 2]));
        let msg = t.add(a, b).unwrap_err().to_string();
        assert!(msg.contains("add") && msg.contains("[2, 3]") && msg.contains("[2, 2]"));
        let msg = t.matmul(a, a).unwrap_err().to_string();
        assert!(msg.contains("matmul"));
    }

    #[test]
    fn broadcast_matmul_matches_per_batch_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = DenseArray::uniform([3, 3], 1.0, &mut rng);
        let x = DenseArray::uniform([2, 3, 4], 1.0, &mut rng);
        let mut t = Tape::new();
        let av = t.constant(a.clone());
        let xv = t.constant(x.clone());
        let y = t.matmul(av, xv).unwrap();
        for bi in 0..2 {
            let xb = DenseArray::new([3, 4], x.data()[bi * 12..(bi + 1) * 12].to_vec()).unwrap();
            let expect = a.matmul(&xb).unwrap();
            let got = &t.value(y).data()[bi * 12..(bi + 1) * 12];
            for (g, e) in got.iter().zip(expect.data()) {
                assert!((g - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn conv_1x1_kernel_is_channel_mixing() {
        let input = arr(&[1, 2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let kernel = arr(&[1, 2, 1, 1], &[10.0, 100.0]);
        let mut t = Tape::new();
        let i = t.constant(input);
        let k = t.constant(kernel);
        let bias = t.constant(arr(&[1], &[0.5]));
        let o = t.conv2d(i, k, Some(bias)).unwrap();
        assert_eq!(t.value(o).data(), &[310.5, 420.5]);
    }

    #[test]
    fn conv_same_padding_3x3_hand_case() {
        // 3×3 image of ones with an all-ones kernel counts in-bounds neighbours.
        let mut t = Tape::new();
        let i = t.constant(DenseArray::full([1, 1, 3, 3], 1.0));
        let k = t.constant(DenseArray::full([1, 1, 3, 3], 1.0));
        let o = t.conv2d(i, k, None).unwrap();
        assert_eq!(
            t.value(o).data(),
            &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]
        );
    }

    #[test]
    fn slice_and_gradient_scatter() {
        let mut store = ParameterStore::new();
        store
            .insert("x", DenseArray::new([2, 3], (0..6).map(f64::from).collect()).unwrap())
            .unwrap();
        let mut t = Tape::new();
        let b = t.bind(&store);
        let x = b.var("x").unwrap();
        let s = t.slice(x, 1, 1, 2).unwrap();
        assert_eq!(t.value(s).data(), &[1.0, 2.0, 4.0, 5.0]);
        let loss = t.sum(s);
        t.backward_into(loss, &mut store).unwrap();
        assert_eq!(store.grad("x").unwrap().data(), &[0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DenseArray::uniform([4, 6], 1.0, &mut rng);
        let b = DenseArray::uniform([6, 5], 1.0, &mut rng);
        let run = || {
            let mut t = Tape::new();
            let x = t.constant(a.clone());
            let y = t.constant(b.clone());
            let z = t.matmul(x, y).unwrap();
            let z = t.tanh(z);
            t.value(z).clone()
        };
        assert_eq!(run(), run());
    }
}
