//! Factored Q-network: shared trunk, one output slice per action dimension.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KernelError, Result};
use crate::nn::{Dense, MultiHeadAttention, ResidualBlock};
use crate::params::ParamSet;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Token embeddings, residual trunk, multi-head self-attention.
    Attention,
    /// Flat input, residual trunk only.
    Vanilla,
}

/// A run of `count` consecutive tokens of `width` features each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenGroup {
    pub count: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub variant: Variant,
    pub input_len: usize,
    /// Only read by the attention variant. Token groups tile the input.
    pub tokens: Vec<TokenGroup>,
    pub model_dim: usize,
    pub res_blocks: usize,
    pub heads: usize,
    pub fusion: Vec<usize>,
    pub head_sizes: Vec<usize>,
}

impl NetworkSpec {
    pub fn output_len(&self) -> usize {
        self.head_sizes.iter().sum()
    }

    pub fn token_count(&self) -> usize {
        self.tokens.iter().map(|g| g.count).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |left: Vec<usize>, right: Vec<usize>| {
            Err(KernelError::ShapeMismatch {
                op: "network_spec",
                left,
                right,
            })
        };
        if self.head_sizes.is_empty() || self.head_sizes.contains(&0) {
            return bad(self.head_sizes.clone(), vec![]);
        }
        if self.variant == Variant::Attention {
            let tiled: usize = self.tokens.iter().map(|g| g.count * g.width).sum();
            if tiled != self.input_len || self.tokens.is_empty() {
                return bad(vec![tiled], vec![self.input_len]);
            }
            if self.heads == 0 || self.model_dim % self.heads != 0 {
                return bad(vec![self.model_dim], vec![self.heads]);
            }
        }
        Ok(())
    }

    /// Flat integer encoding stored in checkpoints.
    pub fn to_dims(&self) -> Vec<u64> {
        let mut d = vec![
            match self.variant {
                Variant::Attention => 0,
                Variant::Vanilla => 1,
            },
            self.input_len as u64,
            self.model_dim as u64,
            self.res_blocks as u64,
            self.heads as u64,
            self.tokens.len() as u64,
        ];
        for g in &self.tokens {
            d.push(g.count as u64);
            d.push(g.width as u64);
        }
        d.push(self.fusion.len() as u64);
        d.extend(self.fusion.iter().map(|&w| w as u64));
        d.push(self.head_sizes.len() as u64);
        d.extend(self.head_sizes.iter().map(|&w| w as u64));
        d
    }

    pub fn from_dims(dims: &[u64]) -> Result<Self> {
        let err = || KernelError::Checkpoint("malformed network dimensions".into());
        let mut it = dims.iter().map(|&v| v as usize);
        let mut next = || it.next().ok_or_else(err);
        let variant = match next()? {
            0 => Variant::Attention,
            1 => Variant::Vanilla,
            _ => return Err(err()),
        };
        let input_len = next()?;
        let model_dim = next()?;
        let res_blocks = next()?;
        let heads = next()?;
        let n_groups = next()?;
        let tokens = (0..n_groups)
            .map(|_| {
                Ok(TokenGroup {
                    count: next()?,
                    width: next()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let n_fusion = next()?;
        let fusion = (0..n_fusion).map(|_| next()).collect::<Result<Vec<_>>>()?;
        let n_heads = next()?;
        let head_sizes = (0..n_heads).map(|_| next()).collect::<Result<Vec<_>>>()?;
        let spec = Self {
            variant,
            input_len,
            tokens,
            model_dim,
            res_blocks,
            heads,
            fusion,
            head_sizes,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone)]
enum Trunk {
    Attention {
        embed: Vec<Dense>,
        blocks: Vec<ResidualBlock>,
        mha: MultiHeadAttention,
    },
    Vanilla {
        input: Dense,
        blocks: Vec<ResidualBlock>,
    },
}

/// Layer graph of a Q-network. Weights are held separately in a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct QNetwork {
    spec: NetworkSpec,
    trunk: Trunk,
    fusion: Vec<Dense>,
    output: Dense,
}

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<(Self, ParamSet)> {
        spec.validate()?;
        let mut ps = ParamSet::new();
        let d = spec.model_dim;
        let (trunk, flat) = match spec.variant {
            Variant::Attention => {
                let embed = spec
                    .tokens
                    .iter()
                    .enumerate()
                    .map(|(g, tg)| Dense::new(&mut ps, &format!("embed{g}"), tg.width, d, rng))
                    .collect();
                let blocks = (0..spec.res_blocks)
                    .map(|b| ResidualBlock::new(&mut ps, &format!("res{b}"), d, rng))
                    .collect();
                let mha = MultiHeadAttention::new(&mut ps, "mha", d, spec.heads, rng)?;
                (
                    Trunk::Attention { embed, blocks, mha },
                    d * spec.token_count(),
                )
            }
            Variant::Vanilla => {
                let input = Dense::new(&mut ps, "input", spec.input_len, d, rng);
                let blocks = (0..spec.res_blocks)
                    .map(|b| ResidualBlock::new(&mut ps, &format!("res{b}"), d, rng))
                    .collect();
                (Trunk::Vanilla { input, blocks }, d)
            }
        };
        let mut width = flat;
        let mut fusion = Vec::with_capacity(spec.fusion.len());
        for (k, &w) in spec.fusion.iter().enumerate() {
            fusion.push(Dense::new(&mut ps, &format!("fusion{k}"), width, w, rng));
            width = w;
        }
        let output = Dense::new(&mut ps, "q", width, spec.output_len(), rng);
        Ok((
            Self {
                spec,
                trunk,
                fusion,
                output,
            },
            ps,
        ))
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Records the forward pass of a `batch × input_len` block of states and
    /// returns the `batch × Σ head_sizes` Q-values.
    pub fn forward_tape(&self, tape: &mut Tape, p: &[Var], states: Var) -> Result<Var> {
        let st = tape.value(states);
        if st.cols() != self.spec.input_len {
            return Err(KernelError::ShapeMismatch {
                op: "qnet_forward",
                left: st.shape().to_vec(),
                right: vec![self.spec.input_len],
            });
        }
        let features = match &self.trunk {
            Trunk::Vanilla { input, blocks } => {
                let mut h = input.forward(tape, p, states)?;
                for b in blocks {
                    h = b.forward(tape, p, h)?;
                }
                h
            }
            Trunk::Attention { embed, blocks, mha } => {
                // Attention mixes tokens within one state, so samples go one at a time.
                let batch = tape.value(states).rows();
                let d = self.spec.model_dim;
                let tokens = self.spec.token_count();
                let len = self.spec.input_len;
                let flat = if batch == 1 {
                    states
                } else {
                    tape.reshape(states, 1, batch * len)?
                };
                let mut rows = Vec::with_capacity(batch);
                for s in 0..batch {
                    let row = if batch == 1 {
                        states
                    } else {
                        tape.slice_cols(flat, s * len, len)?
                    };
                    let mut groups = Vec::with_capacity(embed.len());
                    let mut offset = 0;
                    for (g, layer) in self.spec.tokens.iter().zip(embed) {
                        let block = tape.slice_cols(row, offset, g.count * g.width)?;
                        let block = tape.reshape(block, g.count, g.width)?;
                        groups.push(layer.forward(tape, p, block)?);
                        offset += g.count * g.width;
                    }
                    let mut h = if groups.len() == 1 {
                        groups[0]
                    } else {
                        tape.concat_rows(&groups)?
                    };
                    for b in blocks {
                        h = b.forward(tape, p, h)?;
                    }
                    let att = mha.forward(tape, p, h)?;
                    let h = tape.add(h, att)?;
                    rows.push(tape.reshape(h, 1, tokens * d)?);
                }
                if rows.len() == 1 {
                    rows[0]
                } else {
                    tape.concat_rows(&rows)?
                }
            }
        };
        let mut h = features;
        for f in &self.fusion {
            h = f.forward(tape, p, h)?;
            h = tape.swish(h)?;
        }
        self.output.forward(tape, p, h)
    }

    /// Inference without keeping the tape.
    pub fn forward(&self, params: &ParamSet, states: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = tape.params(params)?;
        let x = tape.input(states.clone())?;
        let q = self.forward_tape(&mut tape, &p, x)?;
        Ok(tape.value(q).clone())
    }

    /// Splits one row of Q-values into per-dimension slices.
    pub fn split_heads<'a>(&self, row: &'a [f64]) -> Vec<&'a [f64]> {
        let mut out = Vec::with_capacity(self.spec.head_sizes.len());
        let mut offset = 0;
        for &n in &self.spec.head_sizes {
            out.push(&row[offset..offset + n]);
            offset += n;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use sha2::{Digest, Sha256};

    pub(crate) fn small_attention_spec() -> NetworkSpec {
        NetworkSpec {
            variant: Variant::Attention,
            input_len: 2 * 3 + 1 * 4,
            tokens: vec![
                TokenGroup { count: 2, width: 3 },
                TokenGroup { count: 1, width: 4 },
            ],
            model_dim: 4,
            res_blocks: 1,
            heads: 2,
            fusion: vec![5],
            head_sizes: vec![3, 2],
        }
    }

    fn states(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Tensor::from_rows(rows, cols, data).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for variant in [Variant::Attention, Variant::Vanilla] {
            let spec = NetworkSpec {
                variant,
                ..small_attention_spec()
            };
            let (net, mut ps) = QNetwork::new(spec, &mut rng).unwrap();
            ps.zero_all();
            let x = states(&mut rng, 3, 10);
            let q = net.forward(&ps, &x).unwrap();
            assert!(q.data().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn batch_rows_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for variant in [Variant::Attention, Variant::Vanilla] {
            let spec = NetworkSpec {
                variant,
                ..small_attention_spec()
            };
            let (net, ps) = QNetwork::new(spec, &mut rng).unwrap();
            let x = states(&mut rng, 4, 10);
            let full = net.forward(&ps, &x).unwrap();
            for r in 0..4 {
                let one = net.forward(&ps, &Tensor::row_vector(x.row(r))).unwrap();
                for (a, b) in one.data().iter().zip(full.row(r)) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn forward_hash_is_stable() {
        let digest = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let (net, ps) = QNetwork::new(small_attention_spec(), &mut rng).unwrap();
            let x = states(&mut rng, 2, 10);
            let q = net.forward(&ps, &x).unwrap();
            let mut h = Sha256::new();
            for v in q.data() {
                h.update(v.to_le_bytes());
            }
            h.finalize().to_vec()
        };
        assert_eq!(digest(), digest());
    }

    #[test]
    fn dims_round_trip() {
        let spec = small_attention_spec();
        assert_eq!(NetworkSpec::from_dims(&spec.to_dims()).unwrap(), spec);
    }

    #[test]
    fn tokens_must_tile_input() {
        let mut spec = small_attention_spec();
        spec.input_len = 11;
        assert!(spec.validate().is_err());
    }
}
