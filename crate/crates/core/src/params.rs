//! Simulation parameters, named profiles, and the flat `key = value` config
//! format.
//!
//! Values are stored in the units users quote them in (dB, dBm, bits); the
//! accessor methods convert to linear SI.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use starv2x_autodiff::OptimizerConfig;

use crate::error::{Error, Result};
use crate::units::{db_to_lin, dbm_to_watts};

/// Which side of the effective threshold the V2V SINR must sit on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutageSense {
    /// `γ_v ≤ γ_ef`, as the constraint is printed.
    PaperUpper,
    /// `γ_v ≥ γ_ef`, the reliability reading.
    Lower,
}

/// Denominator of the rate-floor exponent `2^{R_min/x} − 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QosExponent {
    Bandwidth,
    Antennas,
}

/// What the V2I link contributes to interference at a V2V receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum V2vInterference {
    /// `|h_i p_i|²`, the composed V2I channel.
    Paper,
    /// `|h_{i→rx}|² ‖p_i‖²` over the VUE-to-receiver link.
    CrossLink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Momentum,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    // radio
    /// Hz per V2I channel.
    pub bandwidth_w0: f64,
    /// dBm/Hz.
    pub noise_psd: f64,
    pub pathloss_exp_delta: f64,
    /// Exponent for the two surface hops; `None` uses `pathloss_exp_delta`.
    pub ris_pathloss_exp: Option<f64>,
    /// Extra loss (dB) on vehicle→BS links.
    pub direct_blockage_db: f64,
    /// dB at 1 m.
    pub ref_gain_eta: f64,
    pub rician_k: f64,
    pub carrier_hz: f64,
    /// dB.
    pub outage_threshold_gamma0: f64,
    pub outage_prob_p0: f64,
    /// Use `outage_threshold_gamma0` as γ_ef directly.
    pub threshold_is_effective: bool,
    pub outage_sense: OutageSense,
    pub qos_exponent: QosExponent,
    pub v2v_interference: V2vInterference,
    /// bits.
    pub payload_d: f64,
    /// s.
    pub time_budget_tmax: f64,
    /// dB (relative to 1 W).
    pub p_i_max: f64,
    /// dBm.
    pub p_v_max: f64,
    pub power_levels_lp: usize,
    pub phase_bits_b: u32,
    pub n_elements: usize,
    pub n_antennas_b: usize,
    pub n_vues_i: usize,
    pub n_v2v_pairs_v: usize,
    pub element_groups: usize,
    /// One β_r for the whole surface instead of one per element.
    pub shared_amplitude: bool,
    /// bit/s.
    pub r_min: f64,

    // geometry
    pub bs_position: [f64; 3],
    pub ris_position: [f64; 3],
    pub road_length: f64,
    pub road_width: f64,
    pub lanes_per_direction: usize,
    pub vehicle_height: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Vehicles per metre of lane; `None` picks a value from the active counts.
    pub vehicle_intensity: Option<f64>,
    pub broadcast_range: f64,

    // episode
    pub steps_per_episode: usize,
    pub episodes: usize,

    // learning
    pub discount_zeta: f64,
    /// Second discount listed next to the first one; not used.
    pub alternate_discount: f64,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub eps_initial: f64,
    pub eps_final: f64,
    pub eps_decay_fraction: f64,
    pub target_sync_sq: usize,
    pub replay_capacity: usize,
    pub warmup_transitions: usize,
    pub grad_clip: f64,
    /// Multiplies rewards before they enter TD targets.
    pub reward_scale: f64,
    /// Subtracted from every reward before scaling, learning signal only.
    pub reward_offset: f64,
    pub model_dim: usize,
    pub res_blocks: usize,
    pub attention_heads: usize,
    pub fusion_width: usize,

    // reward
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub q4: f64,
    pub revenue_p0: f64,

    // beamformer
    pub xi_free: bool,
    pub linearize_reverse_convex: bool,
    pub sca_tol_rel: f64,
    pub sca_max_iters: usize,
    pub beamform_every: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        default_params()
    }
}

/// Table values verbatim, plus documented choices where the table is silent.
pub fn default_params() -> SimParams {
    SimParams {
        bandwidth_w0: 10e9,
        noise_psd: -174.0,
        pathloss_exp_delta: 4.0,
        ris_pathloss_exp: None,
        direct_blockage_db: 0.0,
        ref_gain_eta: -40.0,
        rician_k: 10.0,
        carrier_hz: 5.9e9,
        outage_threshold_gamma0: 4.0,
        outage_prob_p0: 0.01,
        threshold_is_effective: false,
        outage_sense: OutageSense::PaperUpper,
        qos_exponent: QosExponent::Bandwidth,
        v2v_interference: V2vInterference::Paper,
        payload_d: 1060.0 * 8.0,
        time_budget_tmax: 0.1,
        p_i_max: 10.0,
        p_v_max: 23.0,
        power_levels_lp: 4,
        phase_bits_b: 2,
        n_elements: 32,
        n_antennas_b: 4,
        n_vues_i: 20,
        n_v2v_pairs_v: 6,
        element_groups: 4,
        shared_amplitude: false,
        r_min: 1e6,

        bs_position: [0.0, 0.0, 10.0],
        ris_position: [60.0, 10.0, 5.0],
        road_length: 120.0,
        road_width: 20.0,
        lanes_per_direction: 2,
        vehicle_height: 1.5,
        speed_min: 10.0,
        speed_max: 20.0,
        vehicle_intensity: None,
        broadcast_range: 50.0,

        steps_per_episode: 20,
        episodes: 1000,

        discount_zeta: 0.98,
        alternate_discount: 0.9,
        learning_rate: 0.001,
        optimizer: OptimizerKind::Sgd,
        batch_size: 4,
        eps_initial: 1.0,
        eps_final: 0.02,
        eps_decay_fraction: 0.3,
        target_sync_sq: 100,
        replay_capacity: 100_000,
        warmup_transitions: 4,
        grad_clip: 0.0,
        reward_scale: 1.0,
        reward_offset: 0.0,
        model_dim: 16,
        res_blocks: 1,
        attention_heads: 2,
        fusion_width: 64,

        q1: 1.0,
        q2: 1.0,
        q3: 1.0,
        q4: 1.0,
        revenue_p0: 1.0,

        xi_free: false,
        linearize_reverse_convex: true,
        sca_tol_rel: 1e-6,
        sca_max_iters: 50,
        beamform_every: 1,
    }
}

/// Reduced topology used for the desk-scale experiments.
pub fn desk_params() -> SimParams {
    SimParams {
        bandwidth_w0: 10e6,
        ris_pathloss_exp: Some(2.2),
        direct_blockage_db: 25.0,
        outage_sense: OutageSense::Lower,
        payload_d: 1e6,
        n_elements: 8,
        n_antennas_b: 2,
        n_vues_i: 4,
        n_v2v_pairs_v: 2,
        element_groups: 4,
        episodes: 300,
        optimizer: OptimizerKind::Adam,
        batch_size: 32,
        warmup_transitions: 64,
        grad_clip: 10.0,
        reward_scale: 0.1,
        reward_offset: 40.0,
        fusion_width: 32,
        ..default_params()
    }
}

/// Smallest topology whose joint action space can be enumerated.
pub fn tiny_params() -> SimParams {
    SimParams {
        n_elements: 2,
        phase_bits_b: 1,
        element_groups: 2,
        n_vues_i: 2,
        n_v2v_pairs_v: 1,
        power_levels_lp: 2,
        // scored against a one-step optimum, so plan over a short horizon
        discount_zeta: 0.5,
        reward_offset: 0.0,
        ..desk_params()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Paper,
    Desk,
    Tiny,
}

impl Profile {
    pub fn params(self) -> SimParams {
        match self {
            Profile::Paper => default_params(),
            Profile::Desk => desk_params(),
            Profile::Tiny => tiny_params(),
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            "tiny" => Ok(Profile::Tiny),
            other => Err(Error::InvalidParam {
                key: "profile".into(),
                reason: format!("unknown profile `{other}`"),
            }),
        }
    }
}

fn invalid(key: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParam {
        key: key.into(),
        reason: reason.into(),
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if self.pathloss_exp_delta < 2.0 {
            return Err(invalid("pathloss_exp_delta", "must be >= 2"));
        }
        if !(self.outage_prob_p0 > 0.0 && self.outage_prob_p0 < 1.0) {
            return Err(Error::InvalidProbability(self.outage_prob_p0));
        }
        if self.power_levels_lp < 2 {
            return Err(invalid("power_levels_lp", "must be >= 2"));
        }
        if self.phase_bits_b < 1 || self.phase_bits_b > 16 {
            return Err(invalid("phase_bits_b", "must be in 1..=16"));
        }
        if !(self.noise_power_sigma2() > 0.0 && self.noise_power_sigma2().is_finite()) {
            return Err(invalid("noise_psd", "noise power must be positive"));
        }
        for (key, v) in [
            ("n_elements", self.n_elements),
            ("n_antennas_b", self.n_antennas_b),
            ("n_vues_i", self.n_vues_i),
            ("steps_per_episode", self.steps_per_episode),
            ("batch_size", self.batch_size),
            ("element_groups", self.element_groups),
            ("lanes_per_direction", self.lanes_per_direction),
            ("beamform_every", self.beamform_every),
            ("target_sync_sq", self.target_sync_sq),
        ] {
            if v == 0 {
                return Err(invalid(key, "must be positive"));
            }
        }
        if self.n_v2v_pairs_v > self.n_vues_i {
            return Err(invalid(
                "n_v2v_pairs_v",
                "each pair needs its own V2I channel, so V <= I",
            ));
        }
        if self.n_elements % self.element_groups != 0 {
            return Err(invalid("element_groups", "must divide n_elements"));
        }
        if self.bandwidth_w0 <= 0.0 || self.time_budget_tmax <= 0.0 || self.payload_d < 0.0 {
            return Err(invalid(
                "bandwidth_w0",
                "bandwidth and time budget must be positive",
            ));
        }
        if self.speed_min < 0.0 || self.speed_max < self.speed_min {
            return Err(invalid("speed_min", "need 0 <= speed_min <= speed_max"));
        }
        if !(0.0 < self.discount_zeta && self.discount_zeta <= 1.0) {
            return Err(invalid("discount_zeta", "must be in (0, 1]"));
        }
        for (key, e) in [
            ("eps_initial", self.eps_initial),
            ("eps_final", self.eps_final),
        ] {
            if !(0.0..=1.0).contains(&e) {
                return Err(invalid(key, "must be in [0, 1]"));
            }
        }
        if self.model_dim % self.attention_heads.max(1) != 0 {
            return Err(invalid("attention_heads", "must divide model_dim"));
        }
        if let Some(x) = self.ris_pathloss_exp {
            if x < 2.0 {
                return Err(invalid("ris_pathloss_exp", "must be >= 2"));
            }
        }
        Ok(())
    }

    /// σ² in watts over one V2I channel.
    pub fn noise_power_sigma2(&self) -> f64 {
        dbm_to_watts(self.noise_psd + 10.0 * self.bandwidth_w0.log10())
    }

    pub fn eta_linear(&self) -> f64 {
        db_to_lin(self.ref_gain_eta)
    }

    pub fn ris_exponent(&self) -> f64 {
        self.ris_pathloss_exp.unwrap_or(self.pathloss_exp_delta)
    }

    pub fn blockage_linear(&self) -> f64 {
        db_to_lin(-self.direct_blockage_db)
    }

    pub fn p_i_max_watts(&self) -> f64 {
        db_to_lin(self.p_i_max)
    }

    pub fn p_v_max_watts(&self) -> f64 {
        dbm_to_watts(self.p_v_max)
    }

    pub fn gamma0_linear(&self) -> f64 {
        db_to_lin(self.outage_threshold_gamma0)
    }

    pub fn wavelength(&self) -> f64 {
        299_792_458.0 / self.carrier_hz
    }

    pub fn lanes(&self) -> usize {
        2 * self.lanes_per_direction
    }

    /// V2V transmit power of level `k` in `0..L_p`.
    pub fn power_level_watts(&self, k: usize) -> f64 {
        self.p_v_max_watts() * k as f64 / (self.power_levels_lp - 1) as f64
    }

    /// Rate V2V pairs need to clear the payload inside the time budget.
    pub fn latency_rate(&self) -> f64 {
        self.payload_d / self.time_budget_tmax
    }

    pub fn step_duration(&self) -> f64 {
        self.time_budget_tmax / self.steps_per_episode as f64
    }

    /// Floor on the V2I SINR slack implied by `r_min`.
    pub fn mu_floor(&self) -> f64 {
        let denom = match self.qos_exponent {
            QosExponent::Bandwidth => self.bandwidth_w0,
            QosExponent::Antennas => self.n_antennas_b as f64,
        };
        2f64.powf(self.r_min / denom) - 1.0
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        let lr = self.learning_rate;
        match self.optimizer {
            OptimizerKind::Sgd => OptimizerConfig::sgd(lr),
            OptimizerKind::Momentum => OptimizerConfig::Momentum { lr, beta: 0.9 },
            OptimizerKind::Adam => OptimizerConfig::adam(lr),
        }
    }

    /// Overrides one field. `value` is read as JSON when it parses, else as a
    /// bare string, so `lower`, `[1,2,3]`, `null` and `4.5` all work.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut obj = serde_json::to_value(&*self)?;
        let map = obj.as_object_mut().expect("params serialize to a map");
        if !map.contains_key(key) {
            return Err(invalid(key, "unknown key"));
        }
        let trimmed = value.trim();
        let parsed = match trimmed {
            "auto" | "none" => Value::Null,
            _ => serde_json::from_str(trimmed).unwrap_or_else(|_| Value::String(trimmed.into())),
        };
        map.insert(key.to_string(), parsed);
        *self = serde_json::from_value(obj).map_err(|e| invalid(key, e.to_string()))?;
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_config_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                line: n + 1,
                reason: "expected `key = value`".into(),
            })?;
            self.set(k.trim(), v).map_err(|e| Error::Config {
                line: n + 1,
                reason: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn apply_config_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.apply_config_text(&text)
    }

    /// Renders every field as a config file that `apply_config_text` reads back.
    pub fn to_config_text(&self) -> String {
        let obj = serde_json::to_value(self).expect("params serialize");
        let mut out = String::new();
        for (k, v) in obj.as_object().expect("map") {
            let rendered = match v {
                Value::String(s) => s.clone(),
                Value::Null => "auto".to_string(),
                other => other.to_string(),
            };
            out.push_str(&format!("{k} = {rendered}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_values() {
        let p = default_params();
        assert_eq!(p.pathloss_exp_delta, 4.0);
        assert_eq!(p.rician_k, 10.0);
        assert_eq!(p.noise_psd, -174.0);
        assert_eq!(p.outage_threshold_gamma0, 4.0);
        assert_eq!(p.p_i_max, 10.0);
        assert_eq!(p.bandwidth_w0, 10e9);
        assert_eq!(p.ref_gain_eta, -40.0);
        assert_eq!(p.discount_zeta, 0.98);
        assert_eq!(p.alternate_discount, 0.9);
        assert_eq!(p.learning_rate, 0.001);
        assert_eq!(p.batch_size, 4);
        assert_eq!(p.episodes, 1000);
        assert_eq!((p.eps_initial, p.eps_final), (1.0, 0.02));
        assert_eq!((p.n_vues_i, p.n_v2v_pairs_v, p.n_elements), (20, 6, 32));
        p.validate().unwrap();
        desk_params().validate().unwrap();
        tiny_params().validate().unwrap();
    }

    #[test]
    fn noise_power_over_ten_megahertz() {
        let p = desk_params();
        // -174 dBm/Hz + 70 dB = -104 dBm
        assert!((p.noise_power_sigma2() - 10f64.powf(-13.4)).abs() < 1e-25);
    }

    #[test]
    fn overrides_parse_types() {
        let mut p = default_params();
        p.set("n_elements", "16").unwrap();
        p.set("outage_sense", "lower").unwrap();
        p.set("bs_position", "[1, 2, 3]").unwrap();
        p.set("vehicle_intensity", "0.05").unwrap();
        assert_eq!(p.n_elements, 16);
        assert_eq!(p.outage_sense, OutageSense::Lower);
        assert_eq!(p.bs_position, [1.0, 2.0, 3.0]);
        assert_eq!(p.vehicle_intensity, Some(0.05));
        p.set("vehicle_intensity", "auto").unwrap();
        assert_eq!(p.vehicle_intensity, None);
        assert!(p.set("no_such_key", "1").is_err());
        assert!(p.set("n_elements", "many").is_err());
    }

    #[test]
    fn config_text_round_trip() {
        let p = desk_params();
        let mut q = default_params();
        q.apply_config_text(&p.to_config_text()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn config_errors_carry_line() {
        let mut p = default_params();
        let err = p
            .apply_config_text("# comment\n\nn_elements = 8\nbogus line\n")
            .unwrap_err();
        assert!(matches!(err, Error::Config { line: 4, .. }));
    }

    #[test]
    fn rejects_bad_probability() {
        let mut p = default_params();
        p.outage_prob_p0 = 1.0;
        assert!(matches!(p.validate(), Err(Error::InvalidProbability(_))));
    }
}
