//! Reverse-mode tape.
//!
//! Every op appends a node holding its value and enough cached state to run
//! its adjoint. Values are checked for finiteness as they are produced, so a
//! NaN surfaces at the op that made it rather than in the loss.

use crate::error::{KernelError, Result};
use crate::params::ParamSet;
use crate::tensor::{matmul, matmul_at, matmul_bt, Tensor};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Swish(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SoftmaxRows(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    MaskedMse {
        pred: Var,
        target: Vec<f64>,
        mask: Vec<f64>,
        denom: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_count: usize,
}

fn check(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(KernelError::NonFiniteValue { op })
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> KernelError {
    KernelError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        check(op_name, &value)?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Registers every tensor of `params` as a differentiable leaf.
    pub fn params(&mut self, params: &ParamSet) -> Result<Vec<Var>> {
        self.param_count = self.param_count.max(params.len());
        params
            .tensors()
            .iter()
            .enumerate()
            .map(|(id, t)| self.push("param", t.clone(), Op::Param(id)))
            .collect()
    }

    /// A constant leaf; gradients flowing into it are discarded.
    pub fn input(&mut self, value: Tensor) -> Result<Var> {
        self.push("input", value, Op::Input)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(mismatch("matmul", ta, tb));
        }
        let (r, k, c) = (ta.rows(), ta.cols(), tb.cols());
        let out = Tensor::from_rows(r, c, matmul(ta.data(), tb.data(), r, k, c))?;
        self.push("matmul", out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(mismatch("matmul_bt", ta, tb));
        }
        let (r, k, c) = (ta.rows(), ta.cols(), tb.rows());
        let out = Tensor::from_rows(r, c, matmul_bt(ta.data(), tb.data(), r, k, c))?;
        self.push("matmul_bt", out, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("add", ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("add", out, Op::Add(a, b))
    }

    /// Adds a `1×c` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        if tr.rows() != 1 || tr.cols() != tx.cols() {
            return Err(mismatch("add_row", tx, tr));
        }
        let c = tx.cols();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + tr.data()[i % c])
            .collect();
        let out = Tensor::from_rows(tx.rows(), c, data)?;
        self.push("add_row", out, Op::AddRow(x, row))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v * s).collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("scale", out, Op::Scale(x, s))
    }

    /// `x · sigmoid(x)`.
    pub fn swish(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| v * sigmoid(v)).collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("swish", out, Op::Swish(x))
    }

    /// Row-wise layer normalization with learned `1×c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let (r, c) = (tx.rows(), tx.cols());
        if tg.cols() != c || tb.cols() != c || tg.rows() != 1 || tb.rows() != 1 {
            return Err(mismatch("layer_norm", tx, tg));
        }
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = tx.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = inv;
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[i * c + j] = h;
                out[i * c + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let out = Tensor::from_rows(r, c, out)?;
        self.push(
            "layer_norm",
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = (tx.rows(), tx.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = tx.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..c {
                let e = (row[j] - max).exp();
                out[i * c + j] = e;
                sum += e;
            }
            for v in &mut out[i * c..(i + 1) * c] {
                *v /= sum;
            }
        }
        let out = Tensor::from_rows(r, c, out)?;
        self.push("softmax", out, Op::SoftmaxRows(x))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = (tx.rows(), tx.cols());
        if start + len > c {
            return Err(KernelError::ShapeMismatch {
                op: "slice_cols",
                left: tx.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&tx.row(i)[start..start + len]);
        }
        let out = Tensor::from_rows(r, len, data)?;
        self.push("slice_cols", out, Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != r {
                return Err(mismatch("concat_cols", self.value(parts[0]), t));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::from_rows(r, total, data)?;
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols() != c {
                return Err(mismatch("concat_rows", self.value(parts[0]), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::from_rows(rows, c, data)?;
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()))
    }

    /// Reinterprets the row-major buffer under a new `rows×cols` shape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.len() != rows * cols {
            return Err(KernelError::ShapeMismatch {
                op: "reshape",
                left: tx.shape().to_vec(),
                right: vec![rows, cols],
            });
        }
        let out = Tensor::from_rows(rows, cols, tx.data().to_vec())?;
        self.push("reshape", out, Op::Reshape(x))
    }

    /// Mean squared error over the entries where `mask` is non-zero.
    /// An all-zero mask yields a zero loss.
    pub fn masked_mse(&mut self, pred: Var, target: &[f64], mask: &[f64]) -> Result<Var> {
        let tp = self.value(pred);
        if tp.len() != target.len() || tp.len() != mask.len() {
            return Err(KernelError::ShapeMismatch {
                op: "masked_mse",
                left: tp.shape().to_vec(),
                right: vec![target.len(), mask.len()],
            });
        }
        let denom: f64 = mask.iter().sum();
        let loss = if denom > 0.0 {
            tp.data()
                .iter()
                .zip(target)
                .zip(mask)
                .map(|((p, t), m)| m * (p - t).powi(2))
                .sum::<f64>()
                / denom
        } else {
            0.0
        };
        let out = Tensor::from_rows(1, 1, vec![loss])?;
        self.push(
            "masked_mse",
            out,
            Op::MaskedMse {
                pred,
                target: target.to_vec(),
                mask: mask.to_vec(),
                denom,
            },
        )
    }

    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let mask = vec![1.0; target.len()];
        self.masked_mse(pred, target, &mask)
    }

    /// Gradients of the scalar `loss` with respect to every registered
    /// parameter, indexed like the [`ParamSet`] handed to [`Tape::params`].
    pub fn backward(&self, loss: Var) -> Result<Vec<Tensor>> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(KernelError::ShapeMismatch {
                op: "backward",
                left: lt.shape().to_vec(),
                right: vec![1],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let mut param_grads: Vec<Option<Tensor>> = vec![None; self.param_count];

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    let t = Tensor::new(node.value.shape().to_vec(), g)?;
                    match &mut param_grads[*id] {
                        Some(acc) => acc.add_assign(&t),
                        slot => *slot = Some(t),
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (r, k, c) = (ta.rows(), ta.cols(), tb.cols());
                    accumulate(&mut grads, *a, matmul_bt(&g, tb.data(), r, c, k));
                    accumulate(&mut grads, *b, matmul_at(ta.data(), &g, r, k, c));
                }
                Op::MatMulBt(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (r, k, c) = (ta.rows(), ta.cols(), tb.rows());
                    accumulate(&mut grads, *a, matmul(&g, tb.data(), r, c, k));
                    accumulate(&mut grads, *b, matmul_at(&g, ta.data(), r, c, k));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(x, row) => {
                    let c = self.value(*row).cols();
                    let mut gr = vec![0.0; c];
                    for (i, v) in g.iter().enumerate() {
                        gr[i % c] += v;
                    }
                    accumulate(&mut grads, *x, g);
                    accumulate(&mut grads, *row, gr);
                }
                Op::Scale(x, s) => {
                    accumulate(&mut grads, *x, g.iter().map(|v| v * s).collect());
                }
                Op::Swish(x) => {
                    let tx = self.value(*x);
                    let gx = tx
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(&v, gv)| {
                            let s = sigmoid(v);
                            gv * (s + v * s * (1.0 - s))
                        })
                        .collect();
                    accumulate(&mut grads, *x, gx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let tg = self.value(*gain);
                    let (r, c) = (node.value.rows(), node.value.cols());
                    let mut gx = vec![0.0; r * c];
                    let mut gg = vec![0.0; c];
                    let mut gb = vec![0.0; c];
                    let n = c as f64;
                    for i in 0..r {
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for j in 0..c {
                            let gv = g[i * c + j];
                            let h = xhat[i * c + j];
                            gg[j] += gv * h;
                            gb[j] += gv;
                            let d = gv * tg.data()[j];
                            sum_d += d;
                            sum_dx += d * h;
                        }
                        for j in 0..c {
                            let d = g[i * c + j] * tg.data()[j];
                            let h = xhat[i * c + j];
                            gx[i * c + j] = inv_std[i] / n * (n * d - sum_d - h * sum_dx);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gain, gg);
                    accumulate(&mut grads, *bias, gb);
                }
                Op::SoftmaxRows(x) => {
                    let y = &node.value;
                    let (r, c) = (y.rows(), y.cols());
                    let mut gx = vec![0.0; r * c];
                    for i in 0..r {
                        let yr = y.row(i);
                        let gr = &g[i * c..(i + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[i * c + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SliceCols { x, start } => {
                    let tx = self.value(*x);
                    let (r, c) = (tx.rows(), tx.cols());
                    let len = node.value.cols();
                    let mut gx = vec![0.0; r * c];
                    for i in 0..r {
                        gx[i * c + start..i * c + start + len]
                            .copy_from_slice(&g[i * len..(i + 1) * len]);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let (r, total) = (node.value.rows(), node.value.cols());
                    let mut offset = 0;
                    for p in parts {
                        let c = self.value(*p).cols();
                        let mut gp = Vec::with_capacity(r * c);
                        for i in 0..r {
                            gp.extend_from_slice(&g[i * total + offset..i * total + offset + c]);
                        }
                        accumulate(&mut grads, *p, gp);
                        offset += c;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        accumulate(&mut grads, *p, g[offset..offset + n].to_vec());
                        offset += n;
                    }
                }
                Op::Reshape(x) => accumulate(&mut grads, *x, g),
                Op::MaskedMse {
                    pred,
                    target,
                    mask,
                    denom,
                } => {
                    let tp = self.value(*pred);
                    let gl = g[0];
                    let gx = if *denom > 0.0 {
                        tp.data()
                            .iter()
                            .zip(target)
                            .zip(mask)
                            .map(|((p, t), m)| gl * 2.0 * m * (p - t) / denom)
                            .collect()
                    } else {
                        vec![0.0; tp.len()]
                    };
                    accumulate(&mut grads, *pred, gx);
                }
            }
        }

        // Parameters the loss never touched get explicit zero gradients.
        let mut out = Vec::with_capacity(self.param_count);
        for (id, g) in param_grads.into_iter().enumerate() {
            let t = match g {
                Some(t) => t,
                None => {
                    let shape = self
                        .nodes
                        .iter()
                        .find(|n| matches!(n.op, Op::Param(p) if p == id))
                        .map(|n| n.value.shape().to_vec())
                        .unwrap_or_else(|| vec![0, 0]);
                    let n = shape.iter().product();
                    Tensor::new(shape, vec![0.0; n])?
                }
            };
            check("backward", &t)?;
            out.push(t);
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b;
            }
        }
        slot => *slot = Some(g),
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn swish_identities() {
        assert_eq!(swish(0.0), 0.0);
        assert!((swish(40.0) - 40.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape
            .input(Tensor::from_rows(2, 3, vec![1.0, -2.0, 0.5, 300.0, 299.0, -50.0]).unwrap())
            .unwrap();
        let y = tape.softmax_rows(x).unwrap();
        for r in 0..2 {
            let s: f64 = tape.value(y).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn nan_trips_error() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::row_vector(&[f64::MAX])).unwrap();
        let err = tape.scale(x, 10.0).unwrap_err();
        assert!(matches!(err, KernelError::NonFiniteValue { op: "scale" }));
    }

    #[test]
    fn mse_gradient_vanishes_at_target() {
        let mut params = ParamSet::new();
        params.push("p", Tensor::row_vector(&[0.3, -1.2]));
        let mut tape = Tape::new();
        let p = tape.params(&params).unwrap();
        let loss = tape.mse(p[0], &[0.3, -1.2]).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g[0].data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn untouched_param_has_zero_gradient() {
        let mut params = ParamSet::new();
        params.push("used", Tensor::row_vector(&[1.0, 2.0]));
        params.push("unused", Tensor::row_vector(&[5.0]));
        let mut tape = Tape::new();
        let p = tape.params(&params).unwrap();
        let loss = tape.mse(p[0], &[0.0, 0.0]).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g[1].data(), &[0.0]);
        assert_eq!(g[0].data(), &[1.0, 2.0]);
    }
}
