//! The allocation MDP: factored action catalog, state encoding and step
//! dynamics with payload and latency bookkeeping.

use std::io::Write;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use starv2x_autodiff::qnet::TokenGroup;

use crate::beamformer::{
    matched_filter, Beamformer, BeamformingProblem, BeamformingSolution, SolveStatus,
};
use crate::channel::{effective_channels, inner, norm_sqr, ChannelSet};
use crate::error::{Error, Result};
use crate::metrics::{link_report, reward, AllocationState, LinkReport};
use crate::params::SimParams;
use crate::rng::{rng_for, tags, SimRng};
use crate::scenario::Scenario;
use crate::star_ris::{Face, StarRisConfig, SurfaceMode};
use crate::units::lin_to_db;

/// Multiplicative amplitude steps.
pub const AMPLITUDE_STEPS: [f64; 3] = [0.9, 1.0, 1.1];
/// Index of the "no change" option in the amplitude and phase branches.
pub const KEEP: usize = 1;

const VUE_FEATURES: usize = 5;
const PAIR_FEATURES: usize = 7;
const ELEMENT_FEATURES: usize = 9;

/// One joint action in decoded form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionTuple {
    /// VUE whose channel each pair reuses; `None` silences the pair.
    pub spectrum: Vec<Option<usize>>,
    /// Index into [`AMPLITUDE_STEPS`] per amplitude head.
    pub amplitude: Vec<usize>,
    /// 0, 1, 2 for −step, 0, +step per element group.
    pub phase_r: Vec<usize>,
    pub phase_t: Vec<usize>,
    pub power: Vec<usize>,
}

/// Factored ("multi-discrete") action space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionCatalog {
    pub n_vues: usize,
    pub n_pairs: usize,
    pub n_elements: usize,
    pub groups: usize,
    pub amplitude_heads: usize,
    pub power_levels: usize,
}

impl ActionCatalog {
    pub fn new(params: &SimParams) -> Self {
        Self {
            n_vues: params.n_vues_i,
            n_pairs: params.n_v2v_pairs_v,
            n_elements: params.n_elements,
            groups: params.element_groups,
            amplitude_heads: if params.shared_amplitude {
                1
            } else {
                params.element_groups
            },
            power_levels: params.power_levels_lp,
        }
    }

    /// Options per branch, in head order: spectrum per pair, amplitude per
    /// head, reflection phase per group, transmission phase per group,
    /// power per pair.
    pub fn branch_sizes(&self) -> Vec<usize> {
        let mut out = vec![self.n_vues + 1; self.n_pairs];
        out.extend(std::iter::repeat_n(
            AMPLITUDE_STEPS.len(),
            self.amplitude_heads,
        ));
        out.extend(std::iter::repeat_n(3, 2 * self.groups));
        out.extend(std::iter::repeat_n(self.power_levels, self.n_pairs));
        out
    }

    pub fn dims(&self) -> usize {
        2 * self.n_pairs + self.amplitude_heads + 2 * self.groups
    }

    pub fn cardinality(&self) -> u128 {
        self.branch_sizes().iter().map(|&s| s as u128).product()
    }

    pub fn group_of(&self, element: usize) -> usize {
        element / (self.n_elements / self.groups)
    }

    pub fn decode(&self, idx: &[usize]) -> Result<ActionTuple> {
        let sizes = self.branch_sizes();
        if idx.len() != sizes.len() {
            return Err(Error::InvalidAction(format!(
                "expected {} indices, got {}",
                sizes.len(),
                idx.len()
            )));
        }
        for (k, (&i, &s)) in idx.iter().zip(&sizes).enumerate() {
            if i >= s {
                return Err(Error::InvalidAction(format!(
                    "branch {k}: index {i} >= {s}"
                )));
            }
        }
        let (v, a, g) = (self.n_pairs, self.amplitude_heads, self.groups);
        Ok(ActionTuple {
            spectrum: idx[..v]
                .iter()
                .map(|&c| (c < self.n_vues).then_some(c))
                .collect(),
            amplitude: idx[v..v + a].to_vec(),
            phase_r: idx[v + a..v + a + g].to_vec(),
            phase_t: idx[v + a + g..v + a + 2 * g].to_vec(),
            power: idx[v + a + 2 * g..].to_vec(),
        })
    }

    pub fn encode(&self, a: &ActionTuple) -> Vec<usize> {
        a.spectrum
            .iter()
            .map(|c| c.unwrap_or(self.n_vues))
            .chain(a.amplitude.iter().copied())
            .chain(a.phase_r.iter().copied())
            .chain(a.phase_t.iter().copied())
            .chain(a.power.iter().copied())
            .collect()
    }

    /// Mixed-radix digits of `flat`, first branch most significant.
    pub fn unravel(&self, mut flat: u128) -> Vec<usize> {
        let sizes = self.branch_sizes();
        let mut out = vec![0; sizes.len()];
        for (slot, &s) in out.iter_mut().zip(&sizes).rev() {
            *slot = (flat % s as u128) as usize;
            flat /= s as u128;
        }
        out
    }

    pub fn ravel(&self, idx: &[usize]) -> u128 {
        idx.iter()
            .zip(self.branch_sizes())
            .fold(0u128, |acc, (&i, s)| acc * s as u128 + i as u128)
    }

    /// Leaves the surface alone and keeps the given allocation.
    pub fn hold(&self, spectrum: &[Option<usize>], power: &[usize]) -> ActionTuple {
        ActionTuple {
            spectrum: spectrum.to_vec(),
            amplitude: vec![KEEP; self.amplitude_heads],
            phase_r: vec![KEEP; self.groups],
            phase_t: vec![KEEP; self.groups],
            power: power.to_vec(),
        }
    }
}

/// Resolves per-pair spectrum choices into an exclusive assignment. A pair
/// whose VUE is already taken moves to the next free VUE in cyclic order.
pub fn resolve_spectrum(choices: &[Option<usize>], n_vues: usize) -> Vec<Option<usize>> {
    let mut taken = vec![false; n_vues];
    choices
        .iter()
        .map(|c| {
            let first = (*c)?;
            let slot = (0..n_vues)
                .map(|k| (first + k) % n_vues)
                .find(|&i| !taken[i])?;
            taken[slot] = true;
            Some(slot)
        })
        .collect()
}

/// Replaces parts of the agent's action, for the benchmark schemes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOverrides {
    pub surface: Option<StarRisConfig>,
    pub spectrum: Option<Vec<Option<usize>>>,
    pub power: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<usize>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub transition: Transition,
    pub report: LinkReport,
    pub beamformer_status: SolveStatus,
}

/// Result of scoring one action on a fixed channel.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub reward: f64,
    pub report: LinkReport,
    pub surface: StarRisConfig,
    pub allocation: AllocationState,
    pub power: Vec<usize>,
    pub solution: BeamformingSolution,
}

/// Documented state length: `5I + V(7 + I) + 9N + 1`.
pub fn state_len(params: &SimParams) -> usize {
    let (i, v, n) = (params.n_vues_i, params.n_v2v_pairs_v, params.n_elements);
    VUE_FEATURES * i + v * (PAIR_FEATURES + i) + ELEMENT_FEATURES * n + 1
}

/// Token layout of the encoded state for the attention network.
pub fn token_groups(params: &SimParams) -> Vec<TokenGroup> {
    vec![
        TokenGroup {
            count: params.n_vues_i,
            width: VUE_FEATURES,
        },
        TokenGroup {
            count: params.n_v2v_pairs_v,
            width: PAIR_FEATURES + params.n_vues_i,
        },
        TokenGroup {
            count: params.n_elements,
            width: ELEMENT_FEATURES,
        },
        TokenGroup { count: 1, width: 1 },
    ]
}

fn db_feature(x: f64) -> f64 {
    lin_to_db(x.max(1e-6)) / 50.0
}

pub struct Env {
    params: SimParams,
    catalog: ActionCatalog,
    mode: SurfaceMode,
    scenario: Scenario,
    rng: SimRng,
    channels: ChannelSet,
    h_eff: Vec<Vec<C64>>,
    surface: StarRisConfig,
    allocation: AllocationState,
    power: Vec<usize>,
    solution: Option<BeamformingSolution>,
    report: LinkReport,
    d_r: Vec<f64>,
    t_r: Vec<f64>,
    step_index: usize,
    solves_skipped: usize,
    infeasible_events: usize,
}

impl Env {
    pub fn new(params: SimParams, scenario: Scenario, mode: SurfaceMode) -> Result<Self> {
        params.validate()?;
        if scenario.vues.len() != params.n_vues_i || scenario.pairs.len() != params.n_v2v_pairs_v {
            return Err(Error::InvalidParam {
                key: "scenario".into(),
                reason: "scenario counts disagree with parameters".into(),
            });
        }
        let catalog = ActionCatalog::new(&params);
        let mut rng = rng_for(scenario.rng_seed, tags::CHANNEL);
        let channels = ChannelSet::draw(&scenario, &params, &mut rng)?;
        let surface = Self::initial_surface(&params, mode);
        let h_eff = effective_channels(&channels, &surface);
        let n_vues = params.n_vues_i;
        let allocation = AllocationState::new(
            n_vues,
            (0..params.n_v2v_pairs_v).map(Some).collect(),
            vec![0.0; params.n_v2v_pairs_v],
            vec![vec![C64::new(0.0, 0.0); params.n_antennas_b]; n_vues],
        )?;
        let report = link_report(&channels, &h_eff, &allocation, &params)?;
        let mut env = Self {
            d_r: vec![params.payload_d; params.n_v2v_pairs_v],
            t_r: vec![params.time_budget_tmax; params.n_v2v_pairs_v],
            power: vec![params.power_levels_lp - 1; params.n_v2v_pairs_v],
            params,
            catalog,
            mode,
            scenario,
            rng,
            channels,
            h_eff,
            surface,
            allocation,
            solution: None,
            report,
            step_index: 0,
            solves_skipped: 0,
            infeasible_events: 0,
        };
        env.reset(env.scenario.rng_seed)?;
        Ok(env)
    }

    fn initial_surface(params: &SimParams, mode: SurfaceMode) -> StarRisConfig {
        match mode {
            SurfaceMode::Star => StarRisConfig::initial(params.n_elements, params.phase_bits_b),
            SurfaceMode::ReflectOnly => {
                StarRisConfig::reflect_only(params.n_elements, params.phase_bits_b)
            }
            SurfaceMode::Absent => StarRisConfig::zero(params.n_elements, params.phase_bits_b),
        }
    }

    /// Fresh channel draw, full payloads and budgets, default surface and
    /// allocation (pair v on VUE v at full power), matched-filter beams.
    pub fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        let v = self.params.n_v2v_pairs_v;
        self.rng = rng_for(seed, tags::CHANNEL);
        self.channels = ChannelSet::draw(&self.scenario, &self.params, &mut self.rng)?;
        self.surface = Self::initial_surface(&self.params, self.mode);
        self.power = vec![self.params.power_levels_lp - 1; v];
        self.d_r = vec![self.params.payload_d; v];
        self.t_r = vec![self.params.time_budget_tmax; v];
        self.step_index = 0;
        self.solution = None;
        self.h_eff = effective_channels(&self.channels, &self.surface);
        let mut allocation = AllocationState::new(
            self.params.n_vues_i,
            (0..v).map(Some).collect(),
            self.power
                .iter()
                .map(|&k| self.params.power_level_watts(k))
                .collect(),
            vec![vec![C64::new(0.0, 0.0); self.params.n_antennas_b]; self.params.n_vues_i],
        )?;
        let prob =
            BeamformingProblem::from_state(&self.channels, &self.h_eff, &allocation, &self.params)?;
        allocation.p_v2i = matched_filter(&prob);
        self.report = link_report(&self.channels, &self.h_eff, &allocation, &self.params)?;
        self.allocation = allocation;
        Ok(self.encode())
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn catalog(&self) -> &ActionCatalog {
        &self.catalog
    }

    pub fn mode(&self) -> SurfaceMode {
        self.mode
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn channels(&self) -> &ChannelSet {
        &self.channels
    }

    pub fn surface(&self) -> &StarRisConfig {
        &self.surface
    }

    pub fn allocation(&self) -> &AllocationState {
        &self.allocation
    }

    pub fn power_levels(&self) -> &[usize] {
        &self.power
    }

    pub fn report(&self) -> &LinkReport {
        &self.report
    }

    pub fn remaining_load(&self) -> &[f64] {
        &self.d_r
    }

    pub fn remaining_time(&self) -> &[f64] {
        &self.t_r
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    /// Steps that reused the previous beamformer powers.
    pub fn solves_skipped(&self) -> usize {
        self.solves_skipped
    }

    pub fn infeasible_events(&self) -> usize {
        self.infeasible_events
    }

    /// Moves vehicles; channels are redrawn at the next reset.
    pub fn advance_mobility(&mut self, dt: f64) {
        self.scenario = self.scenario.advance_mobility(dt);
    }

    /// Replaces the frozen channel, e.g. for held-out evaluation.
    pub fn set_channels(&mut self, channels: ChannelSet) {
        self.channels = channels;
        self.h_eff = effective_channels(&self.channels, &self.surface);
    }

    /// Surface, spectrum and power that `action` leads to from the current
    /// configuration.
    pub fn next_controls(
        &self,
        action: &ActionTuple,
        ov: &StepOverrides,
    ) -> Result<(StarRisConfig, Vec<Option<usize>>, Vec<usize>)> {
        self.catalog.decode(&self.catalog.encode(action))?;
        let surface = match &ov.surface {
            Some(s) => s.clone(),
            None => {
                let n = self.params.n_elements;
                let amp: Vec<f64> = (0..n)
                    .map(|e| {
                        let head = if self.catalog.amplitude_heads == 1 {
                            0
                        } else {
                            self.catalog.group_of(e)
                        };
                        AMPLITUDE_STEPS[action.amplitude[head]]
                    })
                    .collect();
                let mut s = self.surface.apply_amplitude_increment(&amp);
                for e in 0..n {
                    let g = self.catalog.group_of(e);
                    s.shift_kappa(Face::Reflection, e, action.phase_r[g] as i64 - 1);
                    s.shift_kappa(Face::Transmission, e, action.phase_t[g] as i64 - 1);
                }
                s
            }
        };
        let choices = ov
            .spectrum
            .clone()
            .unwrap_or_else(|| action.spectrum.clone());
        let spectrum = resolve_spectrum(&choices, self.params.n_vues_i);
        let power = ov.power.clone().unwrap_or_else(|| action.power.clone());
        Ok((surface, spectrum, power))
    }

    /// Scores controls on `channels` with the given beamformer. When
    /// `reuse` holds a previous solution its per-VUE powers are kept and
    /// only the directions follow the new channel.
    pub fn evaluate_controls(
        &self,
        channels: &ChannelSet,
        surface: &StarRisConfig,
        spectrum: &[Option<usize>],
        power: &[usize],
        bf: Option<&mut dyn Beamformer>,
        reuse: Option<&BeamformingSolution>,
    ) -> Result<Evaluation> {
        let h_eff = effective_channels(channels, surface);
        let n_vues = self.params.n_vues_i;
        let p_v2v = spectrum
            .iter()
            .zip(power)
            .map(|(s, &k)| {
                if s.is_some() {
                    self.params.power_level_watts(k)
                } else {
                    0.0
                }
            })
            .collect();
        let zero_beams = vec![vec![C64::new(0.0, 0.0); self.params.n_antennas_b]; n_vues];
        let mut allocation = AllocationState::new(n_vues, spectrum.to_vec(), p_v2v, zero_beams)?;
        let prob = BeamformingProblem::from_state(channels, &h_eff, &allocation, &self.params)?;
        let solution = match (reuse, bf) {
            (Some(prev), _) => redirect(&prob, prev),
            (None, Some(bf)) => bf.solve(&prob)?,
            (None, None) => {
                let mut mf = crate::beamformer::MatchedFilterBeamformer::default();
                mf.solve(&prob)?
            }
        };
        allocation.p_v2i = solution.p.clone();
        let report = link_report(channels, &h_eff, &allocation, &self.params)?;
        Ok(Evaluation {
            reward: reward(&report, &self.params)?,
            report,
            surface: surface.clone(),
            allocation,
            power: power.to_vec(),
            solution,
        })
    }

    /// One-step reward of `action` on the current (frozen) channel; the
    /// environment is not modified.
    pub fn one_step(
        &self,
        action: &ActionTuple,
        ov: &StepOverrides,
        bf: Option<&mut dyn Beamformer>,
    ) -> Result<Evaluation> {
        let (surface, spectrum, power) = self.next_controls(action, ov)?;
        self.evaluate_controls(&self.channels, &surface, &spectrum, &power, bf, None)
    }

    /// Applies the action, solves the beamformer on the observed channel,
    /// scores the result, then redraws small-scale fading for the next state.
    pub fn step(
        &mut self,
        action: &ActionTuple,
        ov: &StepOverrides,
        bf: &mut dyn Beamformer,
    ) -> Result<StepOutcome> {
        let state = self.encode();
        let (surface, spectrum, power) = self.next_controls(action, ov)?;
        let every = self.params.beamform_every.max(1);
        let reuse = if self.step_index % every != 0 {
            self.solution.as_ref()
        } else {
            None
        };
        if reuse.is_some() {
            self.solves_skipped += 1;
        }
        let eval =
            self.evaluate_controls(&self.channels, &surface, &spectrum, &power, Some(bf), reuse)?;
        if eval.solution.status == SolveStatus::Infeasible {
            self.infeasible_events += 1;
        }
        self.channels = ChannelSet::draw(&self.scenario, &self.params, &mut self.rng)?;
        self.h_eff = effective_channels(&self.channels, &eval.surface);
        self.surface = eval.surface;
        self.allocation = eval.allocation;
        self.power = eval.power;
        self.solution = Some(eval.solution.clone());
        self.report = eval.report;
        let dt = self.params.step_duration();
        for v in 0..self.d_r.len() {
            self.d_r[v] = (self.d_r[v] - self.report.rate_v[v] * dt).max(0.0);
            self.t_r[v] = (self.t_r[v] - dt).max(0.0);
        }
        self.step_index += 1;
        let delivered = self.d_r.iter().all(|d| *d == 0.0);
        let done = self.step_index >= self.params.steps_per_episode || delivered;
        let recorded = ActionTuple {
            spectrum: spectrum.clone(),
            ..action.clone()
        };
        Ok(StepOutcome {
            transition: Transition {
                state,
                action: self.catalog.encode(&recorded),
                reward: eval.reward,
                next_state: self.encode(),
                done,
            },
            report: self.report.clone(),
            beamformer_status: eval.solution.status,
        })
    }

    /// Encoded state; layout follows [`token_groups`].
    pub fn encode(&self) -> Vec<f64> {
        let p = &self.params;
        let sigma2 = p.noise_power_sigma2();
        let mut out = Vec::with_capacity(state_len(p));
        for i in 0..p.n_vues_i {
            let signal = inner(&self.h_eff[i], &self.allocation.p_v2i[i]).norm_sqr();
            out.push(db_feature(signal / sigma2));
            out.push(db_feature(self.report.g_v[i] / sigma2));
            out.push(db_feature(
                norm_sqr(&self.h_eff[i]) * p.p_i_max_watts() / sigma2,
            ));
            out.push(if self.channels.side[i] == Face::Reflection {
                0.0
            } else {
                1.0
            });
            out.push(self.report.rate_i[i] / p.bandwidth_w0 / 10.0);
        }
        let levels = (p.power_levels_lp - 1).max(1) as f64;
        for v in 0..p.n_v2v_pairs_v {
            let assigned = self.allocation.assignment()[v];
            out.extend((0..p.n_vues_i).map(|i| if assigned == Some(i) { 1.0 } else { 0.0 }));
            out.push(if assigned.is_some() { 1.0 } else { 0.0 });
            out.push(self.power[v] as f64 / levels);
            out.push(db_feature(self.report.gamma_v[v]));
            out.push(db_feature(
                self.channels.h_v2v[v].norm_sqr() * p.p_v_max_watts() / sigma2,
            ));
            out.push(if p.payload_d > 0.0 {
                self.d_r[v] / p.payload_d
            } else {
                0.0
            });
            out.push(self.t_r[v] / p.time_budget_tmax);
            out.push(db_feature(self.report.g_i[v] / sigma2));
        }
        let levels = (1u32 << p.phase_bits_b) as f64;
        let lookahead = surface_lookahead(&self.channels, &self.surface, p);
        for (e, la) in lookahead.iter().enumerate() {
            out.push(self.surface.beta_r(e));
            out.push(self.surface.kappa(Face::Reflection, e) as f64 / levels);
            out.push(self.surface.kappa(Face::Transmission, e) as f64 / levels);
            out.extend(la.iter().map(|d| d.clamp(-4.0, 4.0)));
        }
        out.push(self.step_index as f64 / p.steps_per_episode as f64);
        out
    }
}

/// Per element, the change in `Σ_i log2(1 + ‖h_i‖² P_max / σ²)` if that
/// element alone took each incremental step: reflection phase +/−,
/// transmission phase +/−, amplitude up/down. The proxy ignores interference
/// and assumes matched-filter beams.
pub fn surface_lookahead(
    cs: &ChannelSet,
    surface: &StarRisConfig,
    params: &SimParams,
) -> Vec<[f64; 6]> {
    let snr = params.p_i_max_watts() / params.noise_power_sigma2();
    let h = effective_channels(cs, surface);
    let utility = |g: f64| (1.0 + g * snr).log2();
    let base: Vec<f64> = h.iter().map(|hi| utility(norm_sqr(hi))).collect();
    let step = crate::star_ris::phase_step(surface.bits());
    let n_vues = h.len();
    (0..surface.len())
        .map(|n| {
            // change of utility when the face coefficients of element n move by (dr, dt)
            let delta = |dr: C64, dt: C64| -> f64 {
                (0..n_vues)
                    .map(|i| {
                        let d = if cs.side[i] == Face::Reflection {
                            dr
                        } else {
                            dt
                        };
                        if d.norm_sqr() == 0.0 {
                            return 0.0;
                        }
                        let a = cs.h_vue_ris[i][n] * d;
                        let g: f64 = h[i]
                            .iter()
                            .zip(&cs.h_ris_bs[n])
                            .map(|(hb, r)| (hb + a * r).norm_sqr())
                            .sum();
                        utility(g) - base[i]
                    })
                    .sum()
            };
            let cr = surface.coefficient(Face::Reflection, n);
            let ct = surface.coefficient(Face::Transmission, n);
            let rot = |c: C64, s: f64| c * C64::from_polar(1.0, s) - c;
            let zero = C64::new(0.0, 0.0);
            let amp = |factor: f64| -> f64 {
                let mut next = surface.clone();
                next.set_beta_r(n, surface.beta_r(n) * factor);
                delta(
                    next.coefficient(Face::Reflection, n) - cr,
                    next.coefficient(Face::Transmission, n) - ct,
                )
            };
            [
                delta(rot(cr, step), zero),
                delta(rot(cr, -step), zero),
                delta(zero, rot(ct, step)),
                delta(zero, rot(ct, -step)),
                amp(AMPLITUDE_STEPS[2]),
                amp(AMPLITUDE_STEPS[0]),
            ]
        })
        .collect()
}

/// Keeps each VUE's power from `prev` and points it along the matched filter
/// of the new channel.
fn redirect(prob: &BeamformingProblem, prev: &BeamformingSolution) -> BeamformingSolution {
    let mut sol = prev.clone();
    for (i, h) in prob.h.iter().enumerate() {
        let power = prev.p.get(i).map_or(0.0, |p| norm_sqr(p));
        let n = norm_sqr(h).sqrt();
        sol.p[i] = if n > 0.0 {
            h.iter().map(|x| x.conj() * (power.sqrt() / n)).collect()
        } else {
            vec![C64::new(0.0, 0.0); h.len()]
        };
    }
    sol
}

/// Writes transitions as JSON lines.
pub struct TraceWriter<W: Write> {
    out: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, t: &Transition) -> Result<()> {
        serde_json::to_writer(&mut self.out, t)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub fn read_trace(text: &str) -> Result<Vec<Transition>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamformer::{MatchedFilterBeamformer, ScaBeamformer, ScaOptions};
    use crate::params::{desk_params, tiny_params};
    use crate::scenario::drop_scenario;

    fn small() -> SimParams {
        SimParams {
            n_vues_i: 2,
            n_v2v_pairs_v: 1,
            n_elements: 4,
            n_antennas_b: 2,
            element_groups: 2,
            phase_bits_b: 2,
            power_levels_lp: 4,
            ..desk_params()
        }
    }

    fn env(p: SimParams) -> Env {
        let s = drop_scenario(&p, 9).unwrap();
        Env::new(p, s, SurfaceMode::Star).unwrap()
    }

    #[test]
    fn catalog_shape() {
        let mut p = small();
        let c = ActionCatalog::new(&p);
        assert_eq!(c.dims(), 8);
        assert_eq!(c.branch_sizes(), vec![3, 3, 3, 3, 3, 3, 3, 4]);
        assert_eq!(c.cardinality(), 3u128.pow(7) * 4);
        p.element_groups = 4;
        let c = ActionCatalog::new(&p);
        assert_eq!(
            (0..4).map(|e| c.group_of(e)).collect::<Vec<_>>(),
            vec![0, 1, 2, 3]
        );
        assert_eq!(ActionCatalog::new(&tiny_params()).cardinality(), 4374);
    }

    #[test]
    fn ravel_round_trip_and_decode_errors() {
        let c = ActionCatalog::new(&small());
        for flat in [0u128, 1, 77, c.cardinality() - 1] {
            let idx = c.unravel(flat);
            assert_eq!(c.ravel(&idx), flat);
            assert_eq!(c.encode(&c.decode(&idx).unwrap()), idx);
        }
        assert!(matches!(
            c.decode(&[3, 0, 0, 0, 0, 0, 0, 0]),
            Err(Error::InvalidAction(_))
        ));
        assert!(matches!(c.decode(&[0]), Err(Error::InvalidAction(_))));
    }

    #[test]
    fn spectrum_resolution_is_exclusive() {
        assert_eq!(
            resolve_spectrum(&[Some(1), Some(1), None], 3),
            vec![Some(1), Some(2), None]
        );
        assert_eq!(
            resolve_spectrum(&[Some(2), Some(2)], 3),
            vec![Some(2), Some(0)]
        );
    }

    #[test]
    fn state_length_formula() {
        let p = small();
        let e = env(p.clone());
        assert_eq!(state_len(&p), 5 * 2 + (7 + 2) + 9 * 4 + 1);
        assert_eq!(e.encode().len(), state_len(&p));
        let tokens: usize = token_groups(&p).iter().map(|g| g.count * g.width).sum();
        assert_eq!(tokens, state_len(&p));
    }

    #[test]
    fn reset_is_deterministic_and_full() {
        let p = small();
        let mut a = env(p.clone());
        let mut b = env(p.clone());
        assert_eq!(a.reset(5).unwrap(), b.reset(5).unwrap());
        assert_ne!(a.reset(5).unwrap(), a.reset(6).unwrap());
        assert!(a.remaining_load().iter().all(|d| *d == p.payload_d));
        assert!(a.remaining_time().iter().all(|t| *t == p.time_budget_tmax));
    }

    #[test]
    fn hold_action_keeps_surface() {
        let mut e = env(small());
        e.reset(1).unwrap();
        let before = e.surface().clone();
        let hold = e.catalog().hold(&[Some(0)], &[3]);
        let mut bf = MatchedFilterBeamformer::default();
        e.step(&hold, &StepOverrides::default(), &mut bf).unwrap();
        assert_eq!(e.surface(), &before);
    }

    #[test]
    fn budget_exhaustion_and_conservation() {
        let mut p = small();
        p.payload_d = 1e12;
        let mut e = env(p.clone());
        e.reset(2).unwrap();
        let mut bf = ScaBeamformer::new(ScaOptions::default());
        let hold = e.catalog().hold(&[Some(1)], &[2]);
        let mut sent = 0.0;
        let mut done = false;
        for k in 0..p.steps_per_episode {
            assert!(!done);
            let out = e.step(&hold, &StepOverrides::default(), &mut bf).unwrap();
            sent += out.report.rate_v[0] * p.step_duration();
            done = out.transition.done;
            assert_eq!(e.step_index(), k + 1);
        }
        assert!(done);
        assert!(e.remaining_time()[0].abs() < 1e-12);
        assert!((p.payload_d - e.remaining_load()[0] - sent).abs() <= 1e-9 * p.payload_d);
        assert_eq!(bf.calls(), p.steps_per_episode);
    }

    #[test]
    fn delivery_floors_at_zero_and_ends_early() {
        let mut p = small();
        p.payload_d = 1.0;
        let mut e = env(p);
        e.reset(3).unwrap();
        let mut bf = MatchedFilterBeamformer::default();
        let hold = e.catalog().hold(&[Some(0)], &[3]);
        let out = e.step(&hold, &StepOverrides::default(), &mut bf).unwrap();
        assert!(out.report.rate_v[0] * e.params().step_duration() >= 1.0);
        assert_eq!(e.remaining_load()[0], 0.0);
        assert!(out.transition.done);
    }

    #[test]
    fn one_step_does_not_mutate() {
        let mut e = env(small());
        e.reset(4).unwrap();
        let before = e.encode();
        let c = e.catalog().clone();
        let a = c.decode(&c.unravel(100)).unwrap();
        let r1 = e
            .one_step(&a, &StepOverrides::default(), None)
            .unwrap()
            .reward;
        let r2 = e
            .one_step(&a, &StepOverrides::default(), None)
            .unwrap()
            .reward;
        assert_eq!(r1, r2);
        assert_eq!(e.encode(), before);
    }

    #[test]
    fn step_reward_is_scored_on_observed_channel() {
        let mut e = env(small());
        e.reset(6).unwrap();
        let c = e.catalog().clone();
        let a = c.decode(&c.unravel(37)).unwrap();
        let want = e
            .one_step(&a, &StepOverrides::default(), None)
            .unwrap()
            .reward;
        let before = e.channels().clone();
        let mut bf = MatchedFilterBeamformer::default();
        let out = e.step(&a, &StepOverrides::default(), &mut bf).unwrap();
        assert_eq!(out.transition.reward, want);
        assert_ne!(e.channels(), &before);
    }

    #[test]
    fn lookahead_matches_recomputation() {
        let p = small();
        let mut e = env(p.clone());
        e.reset(11).unwrap();
        let mut surface = e.surface().clone();
        surface.set_beta_r(1, 0.4);
        surface.shift_kappa(Face::Transmission, 2, 1);
        let snr = p.p_i_max_watts() / p.noise_power_sigma2();
        let j = |s: &StarRisConfig| -> f64 {
            effective_channels(e.channels(), s)
                .iter()
                .map(|h| (1.0 + norm_sqr(h) * snr).log2())
                .sum()
        };
        let base = j(&surface);
        let la = surface_lookahead(e.channels(), &surface, &p);
        for n in 0..surface.len() {
            let mut want = [0.0; 6];
            for (k, (face, steps)) in [
                (Face::Reflection, 1),
                (Face::Reflection, -1),
                (Face::Transmission, 1),
                (Face::Transmission, -1),
            ]
            .into_iter()
            .enumerate()
            {
                let mut s = surface.clone();
                s.shift_kappa(face, n, steps);
                want[k] = j(&s) - base;
            }
            for (k, f) in [(4, AMPLITUDE_STEPS[2]), (5, AMPLITUDE_STEPS[0])] {
                let mut s = surface.clone();
                s.set_beta_r(n, surface.beta_r(n) * f);
                want[k] = j(&s) - base;
            }
            for k in 0..6 {
                assert!(
                    (la[n][k] - want[k]).abs() < 1e-9 * (1.0 + want[k].abs()),
                    "n {n} k {k}: {} vs {}",
                    la[n][k],
                    want[k]
                );
            }
        }
    }

    #[test]
    fn trace_round_trip() {
        let mut e = env(small());
        e.reset(4).unwrap();
        let mut bf = MatchedFilterBeamformer::default();
        let hold = e.catalog().hold(&[None], &[0]);
        let t = e
            .step(&hold, &StepOverrides::default(), &mut bf)
            .unwrap()
            .transition;
        let mut w = TraceWriter::new(Vec::new());
        w.write(&t).unwrap();
        w.write(&t).unwrap();
        let text = String::from_utf8(w.into_inner()).unwrap();
        assert_eq!(read_trace(&text).unwrap(), vec![t.clone(), t]);
    }
}
