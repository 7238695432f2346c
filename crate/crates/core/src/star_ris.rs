//! Surface configuration: per-element energy split and quantized phases.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Amplitude floor; keeps either face from going permanently dark under
/// multiplicative updates.
pub const BETA_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Face {
    Reflection,
    Transmission,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceMode {
    Star,
    /// Conventional reflect-only surface: β_r = 1, β_t = 0.
    ReflectOnly,
    /// No surface at all; every coefficient is zero.
    Absent,
}

/// `κπ / 2^{b−1}` reduced into `[0, 2π)`.
pub fn quantize_phase(kappa: u32, bits: u32) -> Result<f64> {
    let levels = 1u32 << bits;
    if bits == 0 || kappa >= levels {
        return Err(Error::IndexOutOfRange {
            index: kappa as usize,
            limit: levels as usize,
        });
    }
    Ok((kappa as f64 * PI / (1u32 << (bits - 1)) as f64).rem_euclid(TAU))
}

pub fn phase_step(bits: u32) -> f64 {
    PI / (1u32 << (bits - 1)) as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "SurfaceRecord", from = "SurfaceRecord")]
pub struct StarRisConfig {
    /// β_r stored as f64 bit patterns so configurations can be hashed.
    beta_r_bits: Vec<u64>,
    kappa_r: Vec<u32>,
    kappa_t: Vec<u32>,
    bits: u32,
    mode: SurfaceMode,
}

/// Serialized form: amplitudes as reals, phases as grid indices.
#[derive(Serialize, Deserialize)]
struct SurfaceRecord {
    beta_r: Vec<f64>,
    kappa_r: Vec<u32>,
    kappa_t: Vec<u32>,
    bits: u32,
    mode: SurfaceMode,
}

impl From<StarRisConfig> for SurfaceRecord {
    fn from(c: StarRisConfig) -> Self {
        Self {
            beta_r: c.beta_r_bits.iter().map(|b| f64::from_bits(*b)).collect(),
            kappa_r: c.kappa_r,
            kappa_t: c.kappa_t,
            bits: c.bits,
            mode: c.mode,
        }
    }
}

impl From<SurfaceRecord> for StarRisConfig {
    fn from(r: SurfaceRecord) -> Self {
        Self {
            beta_r_bits: r.beta_r.iter().map(|b| b.to_bits()).collect(),
            kappa_r: r.kappa_r,
            kappa_t: r.kappa_t,
            bits: r.bits,
            mode: r.mode,
        }
    }
}

impl StarRisConfig {
    fn build(n: usize, bits: u32, beta_r: f64, mode: SurfaceMode) -> Self {
        Self {
            beta_r_bits: vec![beta_r.to_bits(); n],
            kappa_r: vec![0; n],
            kappa_t: vec![0; n],
            bits,
            mode,
        }
    }

    /// Even split, zero phase.
    pub fn initial(n: usize, bits: u32) -> Self {
        Self::build(n, bits, FRAC_1_SQRT_2, SurfaceMode::Star)
    }

    pub fn reflect_only(n: usize, bits: u32) -> Self {
        Self::build(n, bits, 1.0, SurfaceMode::ReflectOnly)
    }

    pub fn zero(n: usize, bits: u32) -> Self {
        Self::build(n, bits, 0.0, SurfaceMode::Absent)
    }

    /// Uniform draw from the valid set of `mode`: `β_r ~ U(0, 1)` for a STAR
    /// surface, phases uniform over the grid.
    pub fn random<R: rand::Rng + ?Sized>(
        n: usize,
        bits: u32,
        mode: SurfaceMode,
        rng: &mut R,
    ) -> Self {
        let mut c = match mode {
            SurfaceMode::Star => Self::initial(n, bits),
            SurfaceMode::ReflectOnly => Self::reflect_only(n, bits),
            SurfaceMode::Absent => return Self::zero(n, bits),
        };
        let levels = 1u32 << bits;
        for k in 0..n {
            if mode == SurfaceMode::Star {
                let b: f64 = rng.random();
                c.set_beta_r(k, b);
            }
            c.kappa_r[k] = rng.random_range(0..levels);
            if mode == SurfaceMode::Star {
                c.kappa_t[k] = rng.random_range(0..levels);
            }
        }
        c
    }

    pub fn len(&self) -> usize {
        self.kappa_r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kappa_r.is_empty()
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn mode(&self) -> SurfaceMode {
        self.mode
    }

    pub fn beta_r(&self, n: usize) -> f64 {
        match self.mode {
            SurfaceMode::Star => f64::from_bits(self.beta_r_bits[n]),
            SurfaceMode::ReflectOnly => 1.0,
            SurfaceMode::Absent => 0.0,
        }
    }

    pub fn beta_t(&self, n: usize) -> f64 {
        match self.mode {
            SurfaceMode::Star => {
                let b = self.beta_r(n);
                (1.0 - b * b).sqrt()
            }
            _ => 0.0,
        }
    }

    pub fn beta(&self, face: Face, n: usize) -> f64 {
        match face {
            Face::Reflection => self.beta_r(n),
            Face::Transmission => self.beta_t(n),
        }
    }

    pub fn kappa(&self, face: Face, n: usize) -> u32 {
        match face {
            Face::Reflection => self.kappa_r[n],
            Face::Transmission => self.kappa_t[n],
        }
    }

    pub fn kappas(&self, face: Face) -> &[u32] {
        match face {
            Face::Reflection => &self.kappa_r,
            Face::Transmission => &self.kappa_t,
        }
    }

    pub fn theta(&self, face: Face, n: usize) -> f64 {
        quantize_phase(self.kappa(face, n), self.bits).expect("stored indices stay on the grid")
    }

    /// `β^n_λ e^{jθ^n_λ}`.
    pub fn coefficient(&self, face: Face, n: usize) -> C64 {
        C64::from_polar(self.beta(face, n), self.theta(face, n))
    }

    /// Diagonal coefficient matrix of one face, as dense rows.
    pub fn coefficient_matrix(&self, face: Face) -> Vec<Vec<C64>> {
        let n = self.len();
        (0..n)
            .map(|r| {
                (0..n)
                    .map(|c| {
                        if r == c {
                            self.coefficient(face, r)
                        } else {
                            C64::new(0.0, 0.0)
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Sets β_r (clamped into the floor band); β_t follows from the split.
    pub fn set_beta_r(&mut self, n: usize, value: f64) {
        if self.mode == SurfaceMode::Star {
            self.beta_r_bits[n] = value.clamp(BETA_FLOOR, 1.0 - BETA_FLOOR).to_bits();
        }
    }

    pub fn set_kappa(&mut self, face: Face, n: usize, kappa: u32) -> Result<()> {
        quantize_phase(kappa, self.bits)?;
        match face {
            Face::Reflection => self.kappa_r[n] = kappa,
            Face::Transmission => self.kappa_t[n] = kappa,
        }
        Ok(())
    }

    /// Moves an element's phase by `steps` quantization steps, wrapping.
    pub fn shift_kappa(&mut self, face: Face, n: usize, steps: i64) {
        let levels = 1i64 << self.bits;
        let slot = match face {
            Face::Reflection => &mut self.kappa_r[n],
            Face::Transmission => &mut self.kappa_t[n],
        };
        *slot = (*slot as i64 + steps).rem_euclid(levels) as u32;
    }

    /// `β_r ← clamp(β_r ⊙ Δβ)`; reflect-only and absent surfaces ignore it.
    pub fn apply_amplitude_increment(&self, delta: &[f64]) -> StarRisConfig {
        let mut next = self.clone();
        for (n, d) in delta.iter().enumerate().take(self.len()) {
            next.set_beta_r(n, self.beta_r(n) * d);
        }
        next
    }

    /// Adds phase increments mod 2π. Increments must sit on the grid.
    pub fn apply_phase_increment(&self, delta_r: &[f64], delta_t: &[f64]) -> Result<StarRisConfig> {
        let step = phase_step(self.bits);
        let to_steps = |d: f64| -> Result<i64> {
            let k = d / step;
            if (k - k.round()).abs() > 1e-9 {
                Err(Error::OffGridIncrement(d))
            } else {
                Ok(k.round() as i64)
            }
        };
        let mut next = self.clone();
        for (n, &d) in delta_r.iter().enumerate().take(self.len()) {
            next.shift_kappa(Face::Reflection, n, to_steps(d)?);
        }
        for (n, &d) in delta_t.iter().enumerate().take(self.len()) {
            next.shift_kappa(Face::Transmission, n, to_steps(d)?);
        }
        Ok(next)
    }

    /// Largest `|β_r² + β_t² − 1|` over elements (zero for absent surfaces
    /// by convention).
    pub fn energy_error(&self) -> f64 {
        if self.mode == SurfaceMode::Absent {
            return 0.0;
        }
        (0..self.len())
            .map(|n| (self.beta_r(n).powi(2) + self.beta_t(n).powi(2) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Every stored phase is an exact grid point `κπ/2^{b−1}`.
    pub fn on_grid(&self) -> bool {
        let levels = 1u32 << self.bits;
        self.kappa_r
            .iter()
            .chain(&self.kappa_t)
            .all(|&k| k < levels)
    }
}
