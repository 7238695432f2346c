//! V2I digital beamforming for a fixed surface, spectrum sharing and V2V
//! powers, solved by successive convex approximation.

mod barrier;
mod oracle;
mod sca;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::channel::{norm_sqr, ChannelSet};
use crate::error::{Error, Result};
use crate::metrics::{effective_outage_threshold, v2v_interference_at_bs, AllocationState};
use crate::params::{OutageSense, SimParams, V2vInterference};

pub use oracle::{grid_oracle, water_filling, GridOptimum};
pub use sca::{feasibility_restore, sca_solve};

/// One spectrum-sharing V2V pair as seen by the beamformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharingRow {
    pub vue: usize,
    pub pair: usize,
    /// `p_v |h_v|²` in W.
    pub v2v_signal: f64,
    /// `|h_{i→rx}|²`, used by the cross-link interference model.
    pub cross_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamformingProblem {
    /// Effective V2I channels, one length-B row per VUE.
    pub h: Vec<Vec<C64>>,
    /// V2V interference at the BS per VUE, W.
    pub g_v: Vec<f64>,
    pub sharing: Vec<SharingRow>,
    pub sigma2: f64,
    /// Total V2I power budget, W.
    pub p_max: f64,
    /// Floor on the SINR slack μ.
    pub mu_floor: f64,
    pub gamma_ef: f64,
    pub w0: f64,
    pub outage_sense: OutageSense,
    pub interference: V2vInterference,
}

impl BeamformingProblem {
    /// Builds the subproblem for the current allocation and surface.
    pub fn from_state(
        cs: &ChannelSet,
        h_eff: &[Vec<C64>],
        alloc: &AllocationState,
        params: &SimParams,
    ) -> Result<Self> {
        let sharing = (0..alloc.n_pairs())
            .filter_map(|v| {
                let i = alloc.assignment()[v]?;
                let p_v = alloc.p_v2v[v];
                (p_v > 0.0).then(|| SharingRow {
                    vue: i,
                    pair: v,
                    v2v_signal: p_v * cs.h_v2v[v].norm_sqr(),
                    cross_gain: cs.h_v2i_to_v2vrx[i][v].norm_sqr(),
                })
            })
            .collect();
        let prob = Self {
            h: h_eff.to_vec(),
            g_v: (0..alloc.n_vues())
                .map(|i| v2v_interference_at_bs(cs, alloc, i))
                .collect(),
            sharing,
            sigma2: params.noise_power_sigma2(),
            p_max: params.p_i_max_watts(),
            mu_floor: params.mu_floor(),
            gamma_ef: effective_outage_threshold(params)?,
            w0: params.bandwidth_w0,
            outage_sense: params.outage_sense,
            interference: params.v2v_interference,
        };
        prob.validate()?;
        Ok(prob)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_max > 0.0) {
            return Err(Error::InvalidParam {
                key: "p_i_max".into(),
                reason: "power budget must be positive".into(),
            });
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::InvalidParam {
                key: "noise_psd".into(),
                reason: "noise power must be positive".into(),
            });
        }
        if self.g_v.len() != self.h.len() {
            return Err(Error::InvalidParam {
                key: "g_v".into(),
                reason: "one interference value per VUE".into(),
            });
        }
        for r in &self.sharing {
            if r.vue >= self.h.len() {
                return Err(Error::IndexOutOfRange {
                    index: r.vue,
                    limit: self.h.len(),
                });
            }
        }
        Ok(())
    }

    pub fn n_vues(&self) -> usize {
        self.h.len()
    }

    pub fn n_antennas(&self) -> usize {
        self.h.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIters,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamformingSolution {
    pub p: Vec<Vec<C64>>,
    pub mu: Vec<f64>,
    /// Interference-plus-noise slack in units of σ².
    pub xi: Vec<f64>,
    /// `Σ W0 log2(1 + μ_i)` after each SCA iteration.
    pub iterate_trace: Vec<f64>,
    pub status: SolveStatus,
    /// Smallest common slack the phase-1 program reached; positive means
    /// the constraints could not all be met.
    pub phase1_violation: f64,
}

impl BeamformingSolution {
    pub fn objective(&self) -> f64 {
        self.iterate_trace.last().copied().unwrap_or(0.0)
    }

    pub fn total_power(&self) -> f64 {
        self.p.iter().map(|p| norm_sqr(p)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaOptions {
    pub xi_free: bool,
    pub linearize_reverse_convex: bool,
    pub tol_rel: f64,
    pub max_iters: usize,
}

impl ScaOptions {
    pub fn from_params(params: &SimParams) -> Self {
        Self {
            xi_free: params.xi_free,
            linearize_reverse_convex: params.linearize_reverse_convex,
            tol_rel: params.sca_tol_rel,
            max_iters: params.sca_max_iters,
        }
    }
}

impl Default for ScaOptions {
    fn default() -> Self {
        Self {
            xi_free: false,
            linearize_reverse_convex: true,
            tol_rel: 1e-6,
            max_iters: 50,
        }
    }
}

/// Radial projection of the stacked beamformers onto `‖p‖ ≤ √P_max`.
pub fn project_to_ball(p: &[Vec<C64>], p_max: f64) -> Vec<Vec<C64>> {
    let norm = p.iter().map(|v| norm_sqr(v)).sum::<f64>().sqrt();
    let radius = p_max.sqrt();
    if norm <= radius {
        return p.to_vec();
    }
    let s = radius / norm;
    p.iter()
        .map(|v| v.iter().map(|x| x * s).collect())
        .collect()
}

/// First-order expansion of `√(ξμ)` at `(ξ₀, μ₀)`; majorizes `√(ξμ)`.
pub fn taylor_sqrt_lower_bound(xi_prev: f64, mu_prev: f64, xi: f64, mu: f64) -> Result<f64> {
    if !(xi_prev > 0.0 && mu_prev > 0.0) {
        return Err(Error::DegenerateExpansionPoint {
            xi0: xi_prev,
            mu0: mu_prev,
        });
    }
    Ok((xi_prev * mu_prev).sqrt()
        + 0.5 * (xi_prev / mu_prev).sqrt() * (mu - mu_prev)
        + 0.5 * (mu_prev / xi_prev).sqrt() * (xi - xi_prev))
}

/// `2 Re(c̄ x) − |c|²`, the tangent minorant of `|x|²` at `c`.
pub fn quadratic_minorant(c: C64, x: C64) -> f64 {
    2.0 * (c.conj() * x).re - c.norm_sqr()
}

/// Anything that produces V2I beamformers for a subproblem.
pub trait Beamformer {
    fn solve(&mut self, prob: &BeamformingProblem) -> Result<BeamformingSolution>;

    /// Number of completed solves.
    fn calls(&self) -> usize;
}

/// SCA solver that warm-starts from its previous solution when the
/// dimensions match.
#[derive(Debug, Clone)]
pub struct ScaBeamformer {
    pub opts: ScaOptions,
    pub warm_start: bool,
    last: Option<BeamformingSolution>,
    calls: usize,
}

impl ScaBeamformer {
    pub fn new(opts: ScaOptions) -> Self {
        Self {
            opts,
            warm_start: true,
            last: None,
            calls: 0,
        }
    }

    pub fn last(&self) -> Option<&BeamformingSolution> {
        self.last.as_ref()
    }
}

impl Beamformer for ScaBeamformer {
    fn solve(&mut self, prob: &BeamformingProblem) -> Result<BeamformingSolution> {
        let init = if self.warm_start {
            self.last.as_ref().filter(|s| {
                s.p.len() == prob.n_vues()
                    && s.p.first().map(Vec::len) == prob.h.first().map(Vec::len)
            })
        } else {
            None
        };
        let sol = sca_solve(prob, init, &self.opts)?;
        self.calls += 1;
        self.last = Some(sol.clone());
        Ok(sol)
    }

    fn calls(&self) -> usize {
        self.calls
    }
}

/// Equal power split with matched-filter directions; no optimization.
#[derive(Debug, Clone, Default)]
pub struct MatchedFilterBeamformer {
    calls: usize,
}

/// `√(P/I) h*/‖h‖` per VUE.
pub fn matched_filter(prob: &BeamformingProblem) -> Vec<Vec<C64>> {
    let active = prob.h.iter().filter(|h| norm_sqr(h) > 0.0).count().max(1);
    let amp = (prob.p_max / active as f64).sqrt();
    prob.h
        .iter()
        .map(|h| {
            let n = norm_sqr(h).sqrt();
            if n > 0.0 {
                h.iter().map(|x| x.conj() * (amp / n)).collect()
            } else {
                vec![C64::new(0.0, 0.0); h.len()]
            }
        })
        .collect()
}

impl Beamformer for MatchedFilterBeamformer {
    fn solve(&mut self, prob: &BeamformingProblem) -> Result<BeamformingSolution> {
        self.calls += 1;
        let p = matched_filter(prob);
        let xi: Vec<f64> = prob.g_v.iter().map(|g| 1.0 + g / prob.sigma2).collect();
        let mu: Vec<f64> = prob
            .h
            .iter()
            .zip(&p)
            .zip(&xi)
            .map(|((h, p), x)| crate::channel::inner(h, p).norm_sqr() / prob.sigma2 / x)
            .collect();
        let obj = mu.iter().map(|m| prob.w0 * (1.0 + m).log2()).sum();
        Ok(BeamformingSolution {
            p,
            mu,
            xi,
            iterate_trace: vec![obj],
            status: SolveStatus::Optimal,
            phase1_violation: 0.0,
        })
    }

    fn calls(&self) -> usize {
        self.calls
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn projection_cases() {
        let inside = vec![vec![C64::new(0.3, 0.4)]];
        assert_eq!(project_to_ball(&inside, 1.0), inside);
        let far = vec![vec![C64::new(2.0, 0.0)], vec![C64::new(0.0, 0.0)]];
        let got = project_to_ball(&far, 1.0);
        assert!((got[0][0].re - 1.0).abs() < 1e-15);
        let edge = vec![vec![C64::new(0.6, 0.8)]];
        let got = project_to_ball(&edge, 1.0);
        assert!((got[0][0] - edge[0][0]).norm() < 1e-15);
    }

    #[test]
    fn taylor_cases() {
        assert_eq!(
            taylor_sqrt_lower_bound(2.0, 3.0, 2.0, 3.0).unwrap(),
            6f64.sqrt()
        );
        assert!((taylor_sqrt_lower_bound(1.0, 1.0, 4.0, 4.0).unwrap() - 4.0).abs() < 1e-15);
        assert!(matches!(
            taylor_sqrt_lower_bound(0.0, 1.0, 1.0, 1.0),
            Err(Error::DegenerateExpansionPoint { .. })
        ));
    }

    #[test]
    fn majorization_samples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let v: [f64; 4] = std::array::from_fn(|_| 10f64.powf(rng.random_range(-3.0..3.0)));
            let t = taylor_sqrt_lower_bound(v[0], v[1], v[2], v[3]).unwrap();
            assert!(t >= (v[2] * v[3]).sqrt() - 1e-12 * t.abs().max(1.0));
            let c = C64::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let x = C64::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            assert!(quadratic_minorant(c, x) <= x.norm_sqr() + 1e-12);
        }
    }
}
