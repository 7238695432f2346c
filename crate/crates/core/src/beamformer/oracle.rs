//! Reference solutions for checking the SCA solver.

use num_complex::Complex64 as C64;

use super::BeamformingProblem;
use crate::error::{Error, Result};
use crate::metrics::outage_satisfied;
use crate::params::V2vInterference;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GridOptimum {
    pub value: f64,
    pub p: C64,
}

/// Exhaustive search over `p = r e^{jφ}` for one VUE with one antenna,
/// honoring the true (not linearized) constraints. `None` value when no grid
/// point is feasible.
pub fn grid_oracle(prob: &BeamformingProblem, radii: usize, phases: usize) -> Result<GridOptimum> {
    if prob.n_vues() != 1 || prob.n_antennas() != 1 || prob.sharing.len() > 1 {
        return Err(Error::InvalidParam {
            key: "grid_oracle".into(),
            reason: "needs I = 1, B = 1 and at most one sharing pair".into(),
        });
    }
    let h = prob.h[0][0];
    let noise = prob.g_v[0] + prob.sigma2;
    let mut best = GridOptimum {
        value: f64::NEG_INFINITY,
        p: C64::new(0.0, 0.0),
    };
    for k in 0..radii {
        let r = prob.p_max.sqrt() * k as f64 / (radii - 1).max(1) as f64;
        for l in 0..phases {
            let p = C64::from_polar(r, 2.0 * std::f64::consts::PI * l as f64 / phases as f64);
            let signal = (h * p).norm_sqr();
            let gamma = signal / noise;
            if gamma < prob.mu_floor {
                continue;
            }
            let ok = prob.sharing.iter().all(|row| {
                let g_i = match prob.interference {
                    V2vInterference::Paper => signal,
                    V2vInterference::CrossLink => row.cross_gain * p.norm_sqr(),
                };
                outage_satisfied(
                    row.v2v_signal / (g_i + prob.sigma2),
                    prob.gamma_ef,
                    prob.outage_sense,
                )
            });
            let value = prob.w0 * (1.0 + gamma).log2();
            if ok && value > best.value {
                best = GridOptimum { value, p };
            }
        }
    }
    Ok(best)
}

/// Powers maximizing `Σ ln(1 + g_k P_k)` under `Σ P_k ≤ P`.
pub fn water_filling(gains: &[f64], total: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..gains.len()).filter(|&k| gains[k] > 0.0).collect();
    order.sort_by(|a, b| gains[*b].total_cmp(&gains[*a]));
    let mut level = 0.0;
    let mut used = 0;
    for m in 1..=order.len() {
        let inv_sum: f64 = order[..m].iter().map(|k| 1.0 / gains[*k]).sum();
        let candidate = (total + inv_sum) / m as f64;
        if candidate > 1.0 / gains[order[m - 1]] {
            level = candidate;
            used = m;
        }
    }
    let mut out = vec![0.0; gains.len()];
    for &k in &order[..used] {
        out[k] = (level - 1.0 / gains[k]).max(0.0);
    }
    out
}
