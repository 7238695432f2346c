//! Small- and large-scale channel draws and the surface-composed V2I channel.
//!
//! Array conventions: the surface is a half-wavelength ULA along x, the BS a
//! half-wavelength ULA along y. A link seen at angle ψ from the array axis has
//! steering entries `exp(−jπ n cos ψ)`.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::SimParams;
use crate::scenario::{distance, Point, Scenario};
use crate::star_ris::{Face, StarRisConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSet {
    /// I × B, VUE → BS.
    pub h_direct: Vec<Vec<C64>>,
    /// I × N, VUE → surface.
    pub h_vue_ris: Vec<Vec<C64>>,
    /// N × B, surface → BS.
    pub h_ris_bs: Vec<Vec<C64>>,
    /// V2V transmitter → its receiver.
    pub h_v2v: Vec<C64>,
    /// V2V transmitter → BS.
    pub h_v2v_to_bs: Vec<C64>,
    /// I × V, VUE → V2V receiver.
    pub h_v2i_to_v2vrx: Vec<Vec<C64>>,
    pub side: Vec<Face>,
}

/// One circularly symmetric complex Gaussian with unit variance.
pub fn cn01<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * s, im * s)
}

/// `η d^{−δ}` with an optional extra linear loss.
pub fn pathloss(distance: f64, eta: f64, exponent: f64) -> Result<f64> {
    if distance <= 0.0 {
        return Err(Error::DegenerateGeometry);
    }
    Ok(eta * distance.powf(-exponent))
}

/// `√(η d^{−δ}) · h̃`, entries i.i.d. CN(0, 1).
pub fn rayleigh_link<R: Rng + ?Sized>(
    distance: f64,
    params: &SimParams,
    len: usize,
    rng: &mut R,
) -> Result<Vec<C64>> {
    let amp = pathloss(distance, params.eta_linear(), params.pathloss_exp_delta)?.sqrt();
    Ok((0..len).map(|_| cn01(rng) * amp).collect())
}

/// `√(η d^{−δ}) (√(K/(1+K)) a + √(1/(1+K)) h̃)` for unit-modulus `steering`.
pub fn rician_link<R: Rng + ?Sized>(
    distance: f64,
    steering: &[C64],
    params: &SimParams,
    rng: &mut R,
) -> Result<Vec<C64>> {
    rician_with(
        distance,
        steering,
        params.rician_k,
        params.eta_linear(),
        params.ris_exponent(),
        rng,
    )
}

pub fn rician_with<R: Rng + ?Sized>(
    distance: f64,
    steering: &[C64],
    k: f64,
    eta: f64,
    exponent: f64,
    rng: &mut R,
) -> Result<Vec<C64>> {
    let amp = pathloss(distance, eta, exponent)?.sqrt();
    let los = (k / (1.0 + k)).sqrt();
    let nlos = (1.0 / (1.0 + k)).sqrt();
    Ok(steering
        .iter()
        .map(|a| (a * los + cn01(rng) * nlos) * amp)
        .collect())
}

/// Steering vector of an `n`-element half-wavelength ULA for a link whose
/// direction makes `cos_angle` with the array axis.
pub fn steering(n: usize, cos_angle: f64) -> Vec<C64> {
    (0..n)
        .map(|k| C64::from_polar(1.0, -PI * k as f64 * cos_angle))
        .collect()
}

fn cos_to_axis(from: &Point, to: &Point, axis: usize) -> f64 {
    let d = distance(from, to);
    if d == 0.0 {
        0.0
    } else {
        (to[axis] - from[axis]) / d
    }
}

/// Pure line-of-sight surface → BS matrix, rank one.
pub fn ris_bs_link(scn: &Scenario, params: &SimParams) -> Result<Vec<Vec<C64>>> {
    let d = scn.bs_ris_distance();
    let amp = pathloss(d, params.eta_linear(), params.ris_exponent())?.sqrt();
    let los = (params.rician_k / (1.0 + params.rician_k)).sqrt();
    let a = steering(
        params.n_elements,
        cos_to_axis(&scn.ris_position, &scn.bs_position, 0),
    );
    let b = steering(
        params.n_antennas_b,
        cos_to_axis(&scn.bs_position, &scn.ris_position, 1),
    );
    Ok(a.iter()
        .map(|an| b.iter().map(|bb| an * bb * amp * los).collect())
        .collect())
}

pub fn face_of(position: &Point, ris: &Point) -> Face {
    if position[1] < ris[1] {
        Face::Reflection
    } else {
        Face::Transmission
    }
}

impl ChannelSet {
    /// Draws every link for the current vehicle positions.
    pub fn draw<R: Rng + ?Sized>(scn: &Scenario, params: &SimParams, rng: &mut R) -> Result<Self> {
        let eta = params.eta_linear();
        let block = params.blockage_linear().sqrt();
        let n_vues = scn.vues.len();
        let n_pairs = scn.pairs.len();
        let mut h_direct = Vec::with_capacity(n_vues);
        let mut h_vue_ris = Vec::with_capacity(n_vues);
        let mut side = Vec::with_capacity(n_vues);
        for i in 0..n_vues {
            let pos = scn.vue_position(i);
            let dir = rayleigh_link(
                distance(pos, &scn.bs_position),
                params,
                params.n_antennas_b,
                rng,
            )?;
            h_direct.push(dir.into_iter().map(|h| h * block).collect());
            let a = steering(params.n_elements, cos_to_axis(&scn.ris_position, pos, 0));
            h_vue_ris.push(rician_link(
                distance(pos, &scn.ris_position),
                &a,
                params,
                rng,
            )?);
            side.push(face_of(pos, &scn.ris_position));
        }
        let h_ris_bs = ris_bs_link(scn, params)?;
        let scalar = |d: f64, rng: &mut R| -> Result<C64> {
            Ok(cn01(rng) * pathloss(d, eta, params.pathloss_exp_delta)?.sqrt())
        };
        let mut h_v2v = Vec::with_capacity(n_pairs);
        let mut h_v2v_to_bs = Vec::with_capacity(n_pairs);
        for v in 0..n_pairs {
            h_v2v.push(scalar(
                distance(scn.tx_position(v), scn.rx_position(v)),
                rng,
            )?);
            h_v2v_to_bs.push(scalar(distance(scn.tx_position(v), &scn.bs_position), rng)? * block);
        }
        let mut h_v2i_to_v2vrx = Vec::with_capacity(n_vues);
        for i in 0..n_vues {
            let mut row = Vec::with_capacity(n_pairs);
            for v in 0..n_pairs {
                let d = distance(scn.vue_position(i), scn.rx_position(v));
                // A VUE that is itself the receiver sees no separate path.
                row.push(if d > 0.0 {
                    scalar(d, rng)?
                } else {
                    C64::new(0.0, 0.0)
                });
            }
            h_v2i_to_v2vrx.push(row);
        }
        Ok(Self {
            h_direct,
            h_vue_ris,
            h_ris_bs,
            h_v2v,
            h_v2v_to_bs,
            h_v2i_to_v2vrx,
            side,
        })
    }

    pub fn n_vues(&self) -> usize {
        self.h_direct.len()
    }

    pub fn n_pairs(&self) -> usize {
        self.h_v2v.len()
    }

    pub fn n_antennas(&self) -> usize {
        self.h_ris_bs
            .first()
            .map_or_else(|| self.h_direct[0].len(), Vec::len)
    }
}

/// `h_i = h_{i,B} + h_{i,N} Φ_λ H_{N,B}` with λ the VUE's face.
pub fn effective_v2i_channel(cs: &ChannelSet, ris: &StarRisConfig, i: usize) -> Vec<C64> {
    let face = cs.side[i];
    let mut h = cs.h_direct[i].clone();
    for (n, (hv, row)) in cs.h_vue_ris[i].iter().zip(&cs.h_ris_bs).enumerate() {
        let c = hv * ris.coefficient(face, n);
        if c.norm_sqr() == 0.0 {
            continue;
        }
        for (hb, g) in h.iter_mut().zip(row) {
            *hb += c * g;
        }
    }
    h
}

pub fn effective_channels(cs: &ChannelSet, ris: &StarRisConfig) -> Vec<Vec<C64>> {
    (0..cs.n_vues())
        .map(|i| effective_v2i_channel(cs, ris, i))
        .collect()
}

pub fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(C64::norm_sqr).sum()
}

/// `Σ_b h_b p_b`.
pub fn inner(h: &[C64], p: &[C64]) -> C64 {
    h.iter().zip(p).map(|(a, b)| a * b).sum()
}
