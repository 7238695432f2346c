//! Central finite-difference verification of tape gradients.

use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::nn::{attention, Dense, LayerNorm, MultiHeadAttention, ResidualBlock};
use crate::params::ParamSet;
use crate::qnet::{NetworkSpec, QNetwork, TokenGroup, Variant};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub checked: usize,
}

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares the tape gradient of `loss_fn` against central differences for
/// every scalar in `params`.
pub fn check<F>(name: &str, params: &ParamSet, step: f64, loss_fn: F) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new();
        let p = tape.params(ps)?;
        let l = loss_fn(&mut tape, &p)?;
        Ok(tape.value(l).data()[0])
    };
    let mut tape = Tape::new();
    let p = tape.params(params)?;
    let loss = loss_fn(&mut tape, &p)?;
    let grads = tape.backward(loss)?;

    let mut probe = params.clone();
    let mut report = GradcheckReport {
        name: name.to_string(),
        max_rel_err: 0.0,
        worst_param: String::new(),
        checked: 0,
    };
    for (id, g) in grads.iter().enumerate() {
        for k in 0..g.len() {
            let orig = probe.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = orig + step;
            let up = eval(&probe)?;
            probe.get_mut(id).data_mut()[k] = orig - step;
            let down = eval(&probe)?;
            probe.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(g.data()[k], numeric);
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_param = format!("{}[{k}]", params.names()[id]);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

fn random<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Tensor::from_rows(rows, cols, data).expect("consistent shape")
}

/// Runs the per-layer suite (each layer composed with an MSE loss against a
/// random target), plus both full Q-network variants.
pub fn layer_suite<R: Rng + ?Sized>(rng: &mut R) -> Result<Vec<GradcheckReport>> {
    let mut reports = Vec::new();
    let h = DEFAULT_STEP;

    // dense
    {
        let mut ps = ParamSet::new();
        let d = Dense::new(&mut ps, "dense", 3, 4, rng);
        ps.get_mut(d.bias_id())
            .data_mut()
            .copy_from_slice(random(rng, 1, 4).data());
        let x = random(rng, 2, 3);
        let y = random(rng, 2, 4);
        reports.push(check("dense", &ps, h, |t, p| {
            let xi = t.input(x.clone())?;
            let o = d.forward(t, p, xi)?;
            t.mse(o, y.data())
        })?);
    }
    // layernorm, with the input itself as a parameter so dx is checked too
    {
        let mut ps = ParamSet::new();
        let xid = ps.push("x", random(rng, 3, 5));
        let ln = LayerNorm::new(&mut ps, "ln", 5);
        for id in 1..3 {
            ps.get_mut(id)
                .data_mut()
                .copy_from_slice(random(rng, 1, 5).data());
        }
        let y = random(rng, 3, 5);
        reports.push(check("layernorm", &ps, h, |t, p| {
            let o = ln.forward(t, p, p[xid])?;
            t.mse(o, y.data())
        })?);
    }
    // swish
    {
        let mut ps = ParamSet::new();
        let xid = ps.push("x", random(rng, 2, 6).scaled(3.0));
        let y = random(rng, 2, 6);
        reports.push(check("swish", &ps, h, |t, p| {
            let o = t.swish(p[xid])?;
            t.mse(o, y.data())
        })?);
    }
    // residual block
    {
        let mut ps = ParamSet::new();
        let xid = ps.push("x", random(rng, 3, 4));
        let rb = ResidualBlock::new(&mut ps, "res", 4, rng);
        let y = random(rng, 3, 4);
        reports.push(check("residual", &ps, h, |t, p| {
            let o = rb.forward(t, p, p[xid])?;
            t.mse(o, y.data())
        })?);
    }
    // bare attention with q, k, v all trainable
    {
        let mut ps = ParamSet::new();
        let q = ps.push("q", random(rng, 3, 4));
        let k = ps.push("k", random(rng, 5, 4));
        let v = ps.push("v", random(rng, 5, 2));
        let y = random(rng, 3, 2);
        reports.push(check("attention", &ps, h, |t, p| {
            let o = attention(t, p[q], p[k], p[v])?;
            t.mse(o, y.data())
        })?);
    }
    // multi-head attention
    {
        let mut ps = ParamSet::new();
        let xid = ps.push("x", random(rng, 4, 6));
        let mha = MultiHeadAttention::new(&mut ps, "mha", 6, 3, rng)?;
        let y = random(rng, 4, 6);
        reports.push(check("mha", &ps, h, |t, p| {
            let o = mha.forward(t, p, p[xid])?;
            t.mse(o, y.data())
        })?);
    }
    // masked mse alone
    {
        let mut ps = ParamSet::new();
        let xid = ps.push("x", random(rng, 2, 5));
        let y = random(rng, 2, 5);
        let mask: Vec<f64> = (0..10)
            .map(|i| if i % 3 == 0 { 0.0 } else { 1.0 })
            .collect();
        reports.push(check("mse", &ps, h, |t, p| {
            t.masked_mse(p[xid], y.data(), &mask)
        })?);
    }
    // full networks
    for variant in [Variant::Attention, Variant::Vanilla] {
        let spec = NetworkSpec {
            variant,
            input_len: 2 * 3 + 4,
            tokens: vec![
                TokenGroup { count: 2, width: 3 },
                TokenGroup { count: 1, width: 4 },
            ],
            model_dim: 4,
            res_blocks: 1,
            heads: 2,
            fusion: vec![6],
            head_sizes: vec![3, 2],
        };
        let (net, mut ps) = QNetwork::new(spec, rng)?;
        // Non-zero biases so no parameter sits at a trivially symmetric point.
        for id in 0..ps.len() {
            if ps.names()[id].ends_with(".b") {
                let n = ps.get(id).cols();
                ps.get_mut(id)
                    .data_mut()
                    .copy_from_slice(random(rng, 1, n).scaled(0.3).data());
            }
        }
        let x = random(rng, 2, 10);
        let y = random(rng, 2, 5);
        let name = match variant {
            Variant::Attention => "qnet_attention",
            Variant::Vanilla => "qnet_vanilla",
        };
        reports.push(check(name, &ps, h, |t, p| {
            let xi = t.input(x.clone())?;
            let o = net.forward_tape(t, p, xi)?;
            t.mse(o, y.data())
        })?);
    }
    Ok(reports)
}

trait Scaled {
    fn scaled(self, s: f64) -> Self;
}

impl Scaled for Tensor {
    fn scaled(mut self, s: f64) -> Self {
        self.data_mut().iter_mut().for_each(|v| *v *= s);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn suite_passes_on_one_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for r in layer_suite(&mut rng).unwrap() {
            assert!(
                r.max_rel_err <= 1e-4,
                "{} {} {}",
                r.name,
                r.worst_param,
                r.max_rel_err
            );
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!(relative_error(1.0, 1.1) > 0.05);
        assert!(relative_error(0.0, 1e-9) < 1e-2);
    }
}
