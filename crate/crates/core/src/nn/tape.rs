//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every operation appends a node holding its value and the indices of its
//! inputs. [`Tape::backward`] walks the nodes in reverse and accumulates
//! adjoints. Values are checked for finiteness as they are recorded, so a
//! NaN or infinity aborts at the op that produced it.

use crate::error::{Error, Result};
use crate::numerics::PROB_FLOOR;

use super::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// Copies its input's value; no gradient flows back.
    Detach,
    MatMul(Var, Var),
    /// Adds a `1 x cols` row to every row.
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax(Var),
    /// Row-wise log-softmax floored at `ln(PROB_FLOOR)`.
    LogSoftmax(Var),
    Transpose(Var),
    Sum(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Detach => "detach",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Transpose(..) => "transpose",
            Op::Sum(..) => "sum",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite value produced by {}",
                op.name()
            )));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf)
    }

    pub fn detach(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).clone();
        self.push(value, Op::Detach)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(Error::dims(x.cols(), r.cols()));
        }
        let mut value = x.clone();
        let cols = x.cols();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v += r.data()[i % cols];
        }
        self.push(value, Op::AddRow(a, row))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x * k);
        self.push(value, Op::Scale(a, k))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mut value = Tensor::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            let lse = log_sum_exp(x.row(i));
            for (j, v) in value.data_mut()[i * x.cols()..(i + 1) * x.cols()]
                .iter_mut()
                .enumerate()
            {
                *v = (x.get(i, j) - lse).exp();
            }
        }
        self.push(value, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let floor = PROB_FLOOR.ln();
        let x = self.value(a);
        let mut value = Tensor::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            let lse = log_sum_exp(x.row(i));
            for (j, v) in value.data_mut()[i * x.cols()..(i + 1) * x.cols()]
                .iter_mut()
                .enumerate()
            {
                *v = (x.get(i, j) - lse).max(floor);
            }
        }
        self.push(value, Op::LogSoftmax(a))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<TapeGrads> {
        if self.value(loss).item().is_none() {
            return Err(Error::InvalidInput(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].clone() else { continue };
            let node = &self.nodes[i];
            match node.op {
                Op::Leaf | Op::Detach => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&self.value(b).transpose())?;
                    let gb = self.value(a).transpose().matmul(&g)?;
                    accumulate(&mut grads, a, ga)?;
                    accumulate(&mut grads, b, gb)?;
                }
                Op::AddRow(a, row) => {
                    let mut gr = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (acc, &v) in gr.data_mut().iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads, row, gr)?;
                    accumulate(&mut grads, a, g)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, b, g.clone())?;
                    accumulate(&mut grads, a, g)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, b, g.map(|v| -v))?;
                    accumulate(&mut grads, a, g)?;
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(b), |x, y| x * y)?;
                    let gb = g.zip_map(self.value(a), |x, y| x * y)?;
                    accumulate(&mut grads, a, ga)?;
                    accumulate(&mut grads, b, gb)?;
                }
                Op::Scale(a, k) => accumulate(&mut grads, a, g.map(|v| v * k))?,
                Op::Relu(a) => {
                    let ga = g.zip_map(self.value(a), |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                    accumulate(&mut grads, a, ga)?;
                }
                Op::Softmax(a) => {
                    // dx = s * (dy - <dy, s>)
                    let s = &node.value;
                    let mut ga = Tensor::zeros(s.rows(), s.cols());
                    for r in 0..s.rows() {
                        let dot: f64 = g.row(r).iter().zip(s.row(r)).map(|(x, y)| x * y).sum();
                        for c in 0..s.cols() {
                            ga.data_mut()[r * s.cols() + c] = s.get(r, c) * (g.get(r, c) - dot);
                        }
                    }
                    accumulate(&mut grads, a, ga)?;
                }
                Op::LogSoftmax(a) => {
                    // Floored entries are constant. For the rest,
                    // dx_c = m_c dy_c - s_c * sum_k m_k dy_k.
                    let floor = PROB_FLOOR.ln();
                    let x = self.value(a);
                    let l = &node.value;
                    let mut ga = Tensor::zeros(l.rows(), l.cols());
                    for r in 0..l.rows() {
                        let lse = log_sum_exp(x.row(r));
                        let live: Vec<bool> = x.row(r).iter().map(|&z| z - lse > floor).collect();
                        let total: f64 = g
                            .row(r)
                            .iter()
                            .zip(&live)
                            .filter(|(_, &m)| m)
                            .map(|(v, _)| v)
                            .sum();
                        for (c, &alive) in live.iter().enumerate() {
                            let s = (x.get(r, c) - lse).exp();
                            let own = if alive { g.get(r, c) } else { 0.0 };
                            ga.data_mut()[r * l.cols() + c] = own - s * total;
                        }
                    }
                    accumulate(&mut grads, a, ga)?;
                }
                Op::Transpose(a) => accumulate(&mut grads, a, g.transpose())?,
                Op::Sum(a) => {
                    let gv = g.item().expect("sum output is scalar");
                    let shape = self.value(a).shape();
                    accumulate(&mut grads, a, Tensor::filled(shape[0], shape[1], gv))?;
                }
            }
        }
        Ok(TapeGrads { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
    if !g.is_finite() {
        return Err(Error::Numerical("non-finite gradient".into()));
    }
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Adjoints of every node reachable from the loss.
#[derive(Debug)]
pub struct TapeGrads {
    grads: Vec<Option<Tensor>>,
}

impl TapeGrads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}
