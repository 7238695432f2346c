//! Layers. Each layer owns only parameter indices; values live in a
//! [`ParamSet`] so the same layer graph can run against online and target
//! weights.

use rand::Rng;

use crate::error::{KernelError, Result};
use crate::params::ParamSet;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Uniform fan-in initialization, `U(-1/√fan_in, 1/√fan_in)`.
pub fn fan_in_uniform<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let bound = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::from_rows(rows, cols, data).expect("shape is consistent by construction")
}

#[derive(Debug, Clone)]
pub struct Dense {
    weight: usize,
    bias: usize,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let weight = ps.push(format!("{name}.w"), fan_in_uniform(rng, inputs, outputs));
        let bias = ps.push(format!("{name}.b"), Tensor::zeros(1, outputs));
        Self {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn weight_id(&self) -> usize {
        self.weight
    }

    pub fn bias_id(&self) -> usize {
        self.bias
    }

    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        let y = tape.matmul(x, p[self.weight])?;
        tape.add_row(y, p[self.bias])
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gain: usize,
    bias: usize,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamSet, name: &str, width: usize) -> Self {
        let gain = ps.push(format!("{name}.gain"), Tensor::filled(1, width, 1.0));
        let bias = ps.push(format!("{name}.bias"), Tensor::zeros(1, width));
        Self { gain, bias }
    }

    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        tape.layer_norm(x, p[self.gain], p[self.bias])
    }
}

/// `x + dense₂(swish(layernorm(dense₁(x))))`.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    first: Dense,
    norm: LayerNorm,
    second: Dense,
}

impl ResidualBlock {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamSet, name: &str, width: usize, rng: &mut R) -> Self {
        Self {
            first: Dense::new(ps, &format!("{name}.fc1"), width, width, rng),
            norm: LayerNorm::new(ps, &format!("{name}.ln"), width),
            second: Dense::new(ps, &format!("{name}.fc2"), width, width, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        let h = self.first.forward(tape, p, x)?;
        let h = self.norm.forward(tape, p, h)?;
        let h = tape.swish(h)?;
        let h = self.second.forward(tape, p, h)?;
        tape.add(x, h)
    }
}

/// Scaled dot-product attention, `softmax(q kᵀ / √d_k) v`.
pub fn attention(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<Var> {
    let dk = tape.value(q).cols();
    if tape.value(k).rows() != tape.value(v).rows() {
        return Err(KernelError::ShapeMismatch {
            op: "attention",
            left: tape.value(k).shape().to_vec(),
            right: tape.value(v).shape().to_vec(),
        });
    }
    let scores = tape.matmul_bt(q, k)?;
    let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt())?;
    let weights = tape.softmax_rows(scores)?;
    tape.matmul(weights, v)
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Dense,
    pub wk: Dense,
    pub wv: Dense,
    pub wo: Dense,
    pub heads: usize,
    pub width: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        name: &str,
        width: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(KernelError::ShapeMismatch {
                op: "multi_head_attention",
                left: vec![width],
                right: vec![heads],
            });
        }
        Ok(Self {
            wq: Dense::new(ps, &format!("{name}.q"), width, width, rng),
            wk: Dense::new(ps, &format!("{name}.k"), width, width, rng),
            wv: Dense::new(ps, &format!("{name}.v"), width, width, rng),
            wo: Dense::new(ps, &format!("{name}.o"), width, width, rng),
            heads,
            width,
        })
    }

    /// Self-attention over the rows (tokens) of `x`.
    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        let q = self.wq.forward(tape, p, x)?;
        let k = self.wk.forward(tape, p, x)?;
        let v = self.wv.forward(tape, p, x)?;
        let dk = self.width / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dk, dk)?;
            let kh = tape.slice_cols(k, h * dk, dk)?;
            let vh = tape.slice_cols(v, h * dk, dk)?;
            outs.push(attention(tape, qh, kh, vh)?);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)?
        };
        self.wo.forward(tape, p, cat)
    }
}
