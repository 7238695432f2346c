//! SINRs, rates, constraint flags and the reward.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::channel::{inner, norm_sqr, ChannelSet};
use crate::error::{Error, Result};
use crate::params::{OutageSense, SimParams, V2vInterference};

/// Spectrum sharing, V2V powers and V2I beamformers.
///
/// Sharing is stored as one optional VUE per pair, and construction rejects
/// two pairs on the same VUE, so both exclusivity directions hold by type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationState {
    assignment: Vec<Option<usize>>,
    pub p_v2v: Vec<f64>,
    pub p_v2i: Vec<Vec<C64>>,
}

impl AllocationState {
    pub fn new(
        n_vues: usize,
        assignment: Vec<Option<usize>>,
        p_v2v: Vec<f64>,
        p_v2i: Vec<Vec<C64>>,
    ) -> Result<Self> {
        let mut used = vec![false; n_vues];
        for a in assignment.iter().flatten() {
            if *a >= n_vues {
                return Err(Error::IndexOutOfRange {
                    index: *a,
                    limit: n_vues,
                });
            }
            if used[*a] {
                return Err(Error::InvalidAction(format!(
                    "VUE {a} shared by two V2V pairs"
                )));
            }
            used[*a] = true;
        }
        if p_v2v.len() != assignment.len() || p_v2i.len() != n_vues {
            return Err(Error::InvalidAction(
                "allocation dimensions disagree".into(),
            ));
        }
        Ok(Self {
            assignment,
            p_v2v,
            p_v2i,
        })
    }

    pub fn n_vues(&self) -> usize {
        self.p_v2i.len()
    }

    pub fn n_pairs(&self) -> usize {
        self.assignment.len()
    }

    pub fn assignment(&self) -> &[Option<usize>] {
        &self.assignment
    }

    /// `a_{i,v}`.
    pub fn a(&self, i: usize, v: usize) -> bool {
        self.assignment[v] == Some(i)
    }

    /// The pair reusing VUE `i`'s channel, if any.
    pub fn sharer_of(&self, i: usize) -> Option<usize> {
        self.assignment.iter().position(|a| *a == Some(i))
    }

    /// The `I × V` indicator matrix.
    pub fn matrix(&self) -> Vec<Vec<u8>> {
        (0..self.n_vues())
            .map(|i| (0..self.n_pairs()).map(|v| self.a(i, v) as u8).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkReport {
    pub gamma_i: Vec<f64>,
    pub rate_i: Vec<f64>,
    pub gamma_v: Vec<f64>,
    pub rate_v: Vec<f64>,
    /// V2V interference at the BS on each VUE's channel.
    pub g_v: Vec<f64>,
    /// V2I interference at each V2V receiver.
    pub g_i: Vec<f64>,
    pub qos_ok: Vec<bool>,
    pub latency_ok: Vec<bool>,
    pub outage_ok: Vec<bool>,
}

impl LinkReport {
    pub fn sum_rate(&self) -> f64 {
        self.rate_i.iter().sum()
    }

    pub fn latency_fraction(&self) -> f64 {
        if self.latency_ok.is_empty() {
            return 1.0;
        }
        self.latency_ok.iter().filter(|b| **b).count() as f64 / self.latency_ok.len() as f64
    }
}

/// `W0 log2(1 + γ)`.
pub fn rate(w0: f64, gamma: f64) -> f64 {
    w0 * (1.0 + gamma).log2()
}

/// `G_v` on VUE `i`'s channel.
pub fn v2v_interference_at_bs(cs: &ChannelSet, alloc: &AllocationState, i: usize) -> f64 {
    (0..alloc.n_pairs())
        .filter(|&v| alloc.a(i, v))
        .map(|v| alloc.p_v2v[v] * cs.h_v2v_to_bs[v].norm_sqr())
        .sum()
}

/// Power VUE `i` delivers into the interference term of a sharing pair `v`.
pub fn v2i_leak(
    cs: &ChannelSet,
    h_eff: &[Vec<C64>],
    alloc: &AllocationState,
    i: usize,
    v: usize,
    params: &SimParams,
) -> f64 {
    match params.v2v_interference {
        V2vInterference::Paper => inner(&h_eff[i], &alloc.p_v2i[i]).norm_sqr(),
        V2vInterference::CrossLink => {
            cs.h_v2i_to_v2vrx[i][v].norm_sqr() * norm_sqr(&alloc.p_v2i[i])
        }
    }
}

/// `|h_i p_i|² / (G_v + σ²)`.
pub fn v2i_sinr(
    cs: &ChannelSet,
    h_eff: &[Vec<C64>],
    alloc: &AllocationState,
    i: usize,
    params: &SimParams,
) -> f64 {
    let signal = inner(&h_eff[i], &alloc.p_v2i[i]).norm_sqr();
    signal / (v2v_interference_at_bs(cs, alloc, i) + params.noise_power_sigma2())
}

/// `p_v |h_v|² / (G_i + σ²)`.
pub fn v2v_sinr(
    cs: &ChannelSet,
    h_eff: &[Vec<C64>],
    alloc: &AllocationState,
    v: usize,
    params: &SimParams,
) -> f64 {
    let g_i: f64 = (0..alloc.n_vues())
        .filter(|&i| alloc.a(i, v))
        .map(|i| v2i_leak(cs, h_eff, alloc, i, v, params))
        .sum();
    alloc.p_v2v[v] * cs.h_v2v[v].norm_sqr() / (g_i + params.noise_power_sigma2())
}

/// `γ_0 / ln(1/(1 − p_0))`, or γ_0 itself when configured as already effective.
pub fn effective_outage_threshold(params: &SimParams) -> Result<f64> {
    let p0 = params.outage_prob_p0;
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(Error::InvalidProbability(p0));
    }
    let g0 = params.gamma0_linear();
    if params.threshold_is_effective {
        Ok(g0)
    } else {
        Ok(g0 / (1.0 / (1.0 - p0)).ln())
    }
}

pub fn outage_satisfied(gamma_v: f64, gamma_ef: f64, sense: OutageSense) -> bool {
    match sense {
        OutageSense::PaperUpper => gamma_v <= gamma_ef,
        OutageSense::Lower => gamma_v >= gamma_ef,
    }
}

/// Fills the three flag vectors from rates and SINRs.
pub fn check_constraints(report: &mut LinkReport, params: &SimParams) -> Result<()> {
    let gamma_ef = effective_outage_threshold(params)?;
    let need = params.latency_rate();
    report.qos_ok = report.rate_i.iter().map(|r| *r >= params.r_min).collect();
    report.latency_ok = report.rate_v.iter().map(|r| *r >= need).collect();
    report.outage_ok = report
        .gamma_v
        .iter()
        .map(|g| outage_satisfied(*g, gamma_ef, params.outage_sense))
        .collect();
    Ok(())
}

pub fn link_report(
    cs: &ChannelSet,
    h_eff: &[Vec<C64>],
    alloc: &AllocationState,
    params: &SimParams,
) -> Result<LinkReport> {
    let w0 = params.bandwidth_w0;
    let sigma2 = params.noise_power_sigma2();
    let g_v: Vec<f64> = (0..alloc.n_vues())
        .map(|i| v2v_interference_at_bs(cs, alloc, i))
        .collect();
    let gamma_i: Vec<f64> = (0..alloc.n_vues())
        .map(|i| inner(&h_eff[i], &alloc.p_v2i[i]).norm_sqr() / (g_v[i] + sigma2))
        .collect();
    let g_i: Vec<f64> = (0..alloc.n_pairs())
        .map(|v| {
            (0..alloc.n_vues())
                .filter(|&i| alloc.a(i, v))
                .map(|i| v2i_leak(cs, h_eff, alloc, i, v, params))
                .sum()
        })
        .collect();
    let gamma_v: Vec<f64> = (0..alloc.n_pairs())
        .map(|v| alloc.p_v2v[v] * cs.h_v2v[v].norm_sqr() / (g_i[v] + sigma2))
        .collect();
    let mut report = LinkReport {
        rate_i: gamma_i.iter().map(|g| rate(w0, *g)).collect(),
        rate_v: gamma_v.iter().map(|g| rate(w0, *g)).collect(),
        gamma_i,
        gamma_v,
        g_v,
        g_i,
        qos_ok: Vec::new(),
        latency_ok: Vec::new(),
        outage_ok: Vec::new(),
    };
    check_constraints(&mut report, params)?;
    Ok(report)
}

/// `F(x) = P0` for `x ≥ 0`, else `x`.
pub fn revenue(x: f64, p0: f64) -> f64 {
    if x >= 0.0 {
        p0
    } else {
        x
    }
}

/// Reward with rates in spectral-efficiency units (bit/s/Hz) and the SINR
/// slack measured relative to γ_ef, so all four terms share a scale.
pub fn reward(report: &LinkReport, params: &SimParams) -> Result<f64> {
    let w0 = params.bandwidth_w0;
    let gamma_ef = effective_outage_threshold(params)?;
    let p0 = params.revenue_p0;
    let rmin = params.r_min / w0;
    let need = params.latency_rate() / w0;
    let mut r = 0.0;
    for rate_i in &report.rate_i {
        let se = rate_i / w0;
        r += params.q1 * se + params.q2 * revenue(se - rmin, p0);
    }
    for (rate_v, gamma_v) in report.rate_v.iter().zip(&report.gamma_v) {
        r += params.q3 * revenue(rate_v / w0 - need, p0);
        r += params.q4 * revenue(gamma_v / gamma_ef - 1.0, p0);
    }
    Ok(r)
}

/// Reward when every constraint holds, for the given normalized rates.
pub fn reward_ceiling(se_rates: &[f64], n_pairs: usize, params: &SimParams) -> f64 {
    params.q1 * se_rates.iter().sum::<f64>()
        + (se_rates.len() as f64 * params.q2 + n_pairs as f64 * (params.q3 + params.q4))
            * params.revenue_p0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::desk_params;
    use crate::star_ris::Face;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    /// I = V = B = N = 1 with hand-picked gains.
    fn scalar_setup() -> (ChannelSet, Vec<Vec<C64>>, SimParams) {
        let p = desk_params();
        let cs = ChannelSet {
            h_direct: vec![vec![c(2e-6, -1e-6)]],
            h_vue_ris: vec![vec![c(0.0, 0.0)]],
            h_ris_bs: vec![vec![c(0.0, 0.0)]],
            h_v2v: vec![c(3e-5, 4e-5)],
            h_v2v_to_bs: vec![c(1e-7, 2e-7)],
            h_v2i_to_v2vrx: vec![vec![c(5e-7, 0.0)]],
            side: vec![Face::Reflection],
        };
        let h = cs.h_direct.clone();
        (cs, h, p)
    }

    #[test]
    fn scalar_closed_forms() {
        let (cs, h, p) = scalar_setup();
        let pi = c(0.8, 0.3);
        let pv = 0.05;
        let alloc = AllocationState::new(1, vec![Some(0)], vec![pv], vec![vec![pi]]).unwrap();
        let s2 = p.noise_power_sigma2();
        let sig = (h[0][0] * pi).norm_sqr();
        let gv = pv * cs.h_v2v_to_bs[0].norm_sqr();
        let want_i = sig / (gv + s2);
        let want_v = pv * cs.h_v2v[0].norm_sqr() / (sig + s2);
        let r = link_report(&cs, &h, &alloc, &p).unwrap();
        assert!((r.gamma_i[0] - want_i).abs() / want_i < 1e-12);
        assert!((r.gamma_v[0] - want_v).abs() / want_v < 1e-12);
        assert!((r.rate_i[0] - p.bandwidth_w0 * (1.0 + want_i).log2()).abs() < 1e-6);
        assert!((v2i_sinr(&cs, &h, &alloc, 0, &p) - want_i).abs() / want_i < 1e-12);
        assert!((v2v_sinr(&cs, &h, &alloc, 0, &p) - want_v).abs() / want_v < 1e-12);
    }

    #[test]
    fn unit_snr_gives_one_bit() {
        let (cs, h, p) = scalar_setup();
        let s2 = p.noise_power_sigma2();
        let amp = (s2 / h[0][0].norm_sqr()).sqrt();
        let alloc =
            AllocationState::new(1, vec![None], vec![0.0], vec![vec![c(amp, 0.0)]]).unwrap();
        let r = link_report(&cs, &h, &alloc, &p).unwrap();
        assert!((r.gamma_i[0] - 1.0).abs() < 1e-12);
        assert!((r.rate_i[0] - p.bandwidth_w0).abs() / p.bandwidth_w0 < 1e-12);
        let silent =
            AllocationState::new(1, vec![None], vec![0.0], vec![vec![c(0.0, 0.0)]]).unwrap();
        let r0 = link_report(&cs, &h, &silent, &p).unwrap();
        assert_eq!(
            (r0.gamma_i[0], r0.rate_i[0], r0.gamma_v[0]),
            (0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn toggling_share_moves_g_i_by_signal() {
        let (mut cs, _, p) = scalar_setup();
        cs.h_direct.push(vec![c(-1e-6, 3e-6)]);
        cs.h_vue_ris.push(vec![c(0.0, 0.0)]);
        cs.h_v2i_to_v2vrx.push(vec![c(1e-7, 0.0)]);
        cs.side.push(Face::Transmission);
        let h = cs.h_direct.clone();
        let p_i = vec![vec![c(0.5, 0.1)], vec![c(0.2, -0.7)]];
        let on0 = AllocationState::new(2, vec![Some(0)], vec![0.1], p_i.clone()).unwrap();
        let on1 = AllocationState::new(2, vec![Some(1)], vec![0.1], p_i.clone()).unwrap();
        let off = AllocationState::new(2, vec![None], vec![0.1], p_i.clone()).unwrap();
        let r0 = link_report(&cs, &h, &on0, &p).unwrap();
        let r1 = link_report(&cs, &h, &on1, &p).unwrap();
        let rn = link_report(&cs, &h, &off, &p).unwrap();
        assert_eq!(rn.g_i[0], 0.0);
        assert!((r0.g_i[0] - (h[0][0] * p_i[0][0]).norm_sqr()).abs() < 1e-30);
        assert!((r1.g_i[0] - (h[1][0] * p_i[1][0]).norm_sqr()).abs() < 1e-30);
    }

    #[test]
    fn exclusivity_is_enforced() {
        let z = vec![vec![c(0.0, 0.0)]; 2];
        assert!(
            AllocationState::new(2, vec![Some(0), Some(0)], vec![0.0, 0.0], z.clone()).is_err()
        );
        assert!(AllocationState::new(2, vec![Some(2), None], vec![0.0, 0.0], z.clone()).is_err());
        assert!(AllocationState::new(2, vec![Some(1), Some(0)], vec![0.0, 0.0], z).is_ok());
    }

    #[test]
    fn threshold_values() {
        let mut p = desk_params();
        p.outage_prob_p0 = 0.01;
        let g = effective_outage_threshold(&p).unwrap();
        assert!((g - 249.94).abs() < 0.01, "{g}");
        p.outage_prob_p0 = 1.0 - (-1.0f64).exp();
        assert!((effective_outage_threshold(&p).unwrap() - p.gamma0_linear()).abs() < 1e-12);
        p.outage_prob_p0 = 0.5;
        let want = p.gamma0_linear() / 2f64.ln();
        assert!((effective_outage_threshold(&p).unwrap() - want).abs() < 1e-12);
        p.outage_prob_p0 = 0.0;
        assert!(matches!(
            effective_outage_threshold(&p),
            Err(Error::InvalidProbability(_))
        ));
    }

    #[test]
    fn constraint_boundaries_are_inclusive() {
        let mut p = desk_params();
        p.payload_d = 1e6;
        p.time_budget_tmax = 0.1;
        let gamma_ef = effective_outage_threshold(&p).unwrap();
        let mut r = LinkReport {
            gamma_i: vec![0.0],
            rate_i: vec![p.r_min],
            gamma_v: vec![gamma_ef],
            rate_v: vec![9.9e6],
            g_v: vec![0.0],
            g_i: vec![0.0],
            qos_ok: vec![],
            latency_ok: vec![],
            outage_ok: vec![],
        };
        p.outage_sense = OutageSense::PaperUpper;
        check_constraints(&mut r, &p).unwrap();
        assert_eq!(
            (r.qos_ok[0], r.latency_ok[0], r.outage_ok[0]),
            (true, false, true)
        );
        p.outage_sense = OutageSense::Lower;
        check_constraints(&mut r, &p).unwrap();
        assert!(r.outage_ok[0]);
    }

    #[test]
    fn reward_terms() {
        let p = desk_params();
        assert_eq!(revenue(0.0, p.revenue_p0), p.revenue_p0);
        assert_eq!(revenue(-0.25, 1.0), -0.25);
        let w0 = p.bandwidth_w0;
        let gamma_ef = effective_outage_threshold(&p).unwrap();
        let need = p.latency_rate();
        let good = LinkReport {
            gamma_i: vec![3.0, 7.0],
            rate_i: vec![2.0 * w0, 3.0 * w0],
            gamma_v: vec![2.0 * gamma_ef],
            rate_v: vec![need * 2.0],
            g_v: vec![0.0; 2],
            g_i: vec![0.0],
            qos_ok: vec![],
            latency_ok: vec![],
            outage_ok: vec![],
        };
        let ceiling = reward_ceiling(&[2.0, 3.0], 1, &p);
        assert!((reward(&good, &p).unwrap() - ceiling).abs() < 1e-12);
        assert!((ceiling - (5.0 + 2.0 + 1.0 + 1.0)).abs() < 1e-12);
        // One latency violation by slack s replaces q3·P0 with q3·s.
        let mut late = good.clone();
        late.rate_v[0] = need - 0.3 * w0;
        let diff = reward(&good, &p).unwrap() - reward(&late, &p).unwrap();
        assert!((diff - (p.q3 * p.revenue_p0 + 0.3 * p.q3)).abs() < 1e-12);
    }
}
