//! Training loop over schemes and seeds, the exhaustive one-step oracle and
//! result export.

pub mod export;
pub mod oracle;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use starv2x_autodiff::Variant;

use crate::agent::{AgentConfig, DdqnAgent, MabAgent, Policy};
use crate::beamformer::{Beamformer, ScaBeamformer, ScaOptions, SolveStatus};
use crate::env::{Env, StepOverrides, Transition};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::params::SimParams;
use crate::rng::{derive_seed, rng_for, tags, SimRng};
use crate::scenario::drop_scenario;
use crate::star_ris::{StarRisConfig, SurfaceMode};

pub use export::{convergence_episode, export_all, summarize, window_converged, Summary};
pub use oracle::{
    brute_force_oracle, brute_force_over, greedy_vs_oracle, held_out_draws, HeldOut, OracleResult,
    MAX_ENUMERATION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Scheme {
    StarProposed,
    StarRandom,
    RisProposed,
    RisRandom,
    DdqnVanilla,
    Mab,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Learner {
    Attention,
    Vanilla,
    Bandit,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::StarProposed,
        Scheme::StarRandom,
        Scheme::RisProposed,
        Scheme::RisRandom,
        Scheme::DdqnVanilla,
        Scheme::Mab,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::StarProposed => "STAR_PROPOSED",
            Scheme::StarRandom => "STAR_RANDOM",
            Scheme::RisProposed => "RIS_PROPOSED",
            Scheme::RisRandom => "RIS_RANDOM",
            Scheme::DdqnVanilla => "DDQN_VANILLA",
            Scheme::Mab => "MAB",
        }
    }

    pub fn mode(self) -> SurfaceMode {
        match self {
            Scheme::RisProposed | Scheme::RisRandom => SurfaceMode::ReflectOnly,
            _ => SurfaceMode::Star,
        }
    }

    /// Surface coefficients drawn uniformly every step instead of learned.
    pub fn random_surface(self) -> bool {
        matches!(self, Scheme::StarRandom | Scheme::RisRandom)
    }

    pub fn learner(self) -> Learner {
        match self {
            Scheme::DdqnVanilla => Learner::Vanilla,
            Scheme::Mab => Learner::Bandit,
            _ => Learner::Attention,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase().replace('-', "_");
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == up)
            .ok_or_else(|| Error::InvalidParam {
                key: "scheme".into(),
                reason: format!("unknown scheme `{s}`"),
            })
    }
}

/// Everything that determines a run, apart from where files go.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scheme: Scheme,
    pub params: SimParams,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    /// Zero disables checkpoints.
    pub checkpoint_every: usize,
    /// Trailing episodes whose per-VUE rates feed the CDF export.
    pub cdf_window: usize,
}

impl Manifest {
    pub fn new(scheme: Scheme, params: SimParams, seeds: Vec<u64>) -> Self {
        Self {
            scheme,
            episodes: params.episodes,
            params,
            seeds,
            checkpoint_every: 0,
            cdf_window: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::InvalidParam {
                key: "seeds".into(),
                reason: "at least one seed is required".into(),
            });
        }
        Ok(())
    }

    /// Hex sha256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("manifest serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub scheme: Scheme,
    pub seed: u64,
    /// Mean over steps of the summed V2I rate, bit/s.
    pub sum_rate: f64,
    /// Mean over steps of the share of pairs meeting `D / T_max`.
    pub p_latency: f64,
    /// Mean step reward.
    pub reward: f64,
    pub outage_fraction: f64,
    pub steps: usize,
    pub infeasible: usize,
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub scheme: Scheme,
    pub seed: u64,
    pub records: Vec<EpisodeRecord>,
    pub rate_samples: Vec<f64>,
    pub solver_calls: usize,
    /// Largest transmission amplitude seen in any applied surface.
    pub max_beta_t: f64,
}

pub enum LearnerState {
    Ddqn(Box<DdqnAgent>),
    Bandit(MabAgent),
}

impl LearnerState {
    pub fn build(
        scheme: Scheme,
        params: &SimParams,
        branch_sizes: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        let rng = rng_for(seed, tags::AGENT);
        let variant = match scheme.learner() {
            Learner::Attention => Variant::Attention,
            Learner::Vanilla => Variant::Vanilla,
            Learner::Bandit => {
                let cfg = AgentConfig::from_params(params, Variant::Vanilla, branch_sizes.clone());
                let mut m = MabAgent::new(&branch_sizes, params.eps_initial, rng);
                m.schedule = Some(cfg.schedule());
                return Ok(Self::Bandit(m));
            }
        };
        let cfg = AgentConfig::from_params(params, variant, branch_sizes);
        let mut net_rng = rng_for(seed, tags::NETWORK);
        Ok(Self::Ddqn(Box::new(DdqnAgent::new(
            cfg,
            &mut net_rng,
            rng,
        )?)))
    }

    pub fn policy(&mut self) -> &mut dyn Policy {
        match self {
            Self::Ddqn(a) => a.as_mut(),
            Self::Bandit(m) => m,
        }
    }

    pub fn ddqn(&self) -> Option<&DdqnAgent> {
        match self {
            Self::Ddqn(a) => Some(a),
            Self::Bandit(_) => None,
        }
    }
}

/// One seed's environment, learner and beamformer.
pub struct Trainer {
    pub scheme: Scheme,
    pub seed: u64,
    pub env: Env,
    pub learner: LearnerState,
    pub beamformer: ScaBeamformer,
    scheme_rng: SimRng,
    max_beta_t: f64,
}

impl Trainer {
    pub fn new(scheme: Scheme, params: &SimParams, seed: u64) -> Result<Self> {
        let scenario = drop_scenario(params, seed)?;
        let env = Env::new(params.clone(), scenario, scheme.mode())?;
        let learner = LearnerState::build(scheme, params, env.catalog().branch_sizes(), seed)?;
        Ok(Self {
            scheme,
            seed,
            env,
            learner,
            beamformer: ScaBeamformer::new(ScaOptions::from_params(params)),
            scheme_rng: rng_for(seed, tags::SCHEME),
            max_beta_t: 0.0,
        })
    }

    pub fn max_beta_t(&self) -> f64 {
        self.max_beta_t
    }

    fn overrides(&mut self) -> StepOverrides {
        if !self.scheme.random_surface() {
            return StepOverrides::default();
        }
        let p = self.env.params();
        StepOverrides {
            surface: Some(StarRisConfig::random(
                p.n_elements,
                p.phase_bits_b,
                self.scheme.mode(),
                &mut self.scheme_rng,
            )),
            ..StepOverrides::default()
        }
    }

    /// Runs one training episode. Per-VUE rates of every step go to `rates`.
    pub fn run_episode(
        &mut self,
        episode: usize,
        total: usize,
        rates: Option<&mut Vec<f64>>,
    ) -> Result<EpisodeRecord> {
        self.learner.policy().begin_episode(episode, total);
        let mut state = self.env.reset(derive_seed(self.seed, episode as u64 + 1))?;
        let steps = self.env.params().steps_per_episode;
        let (mut sum_rate, mut p_lat, mut reward, mut outage) = (0.0, 0.0, 0.0, 0.0);
        let (mut taken, mut infeasible) = (0, 0);
        let mut losses = Vec::new();
        let mut sink = rates;
        for _ in 0..steps {
            let idx = self.learner.policy().act(&state, true)?;
            let action = self.env.catalog().decode(&idx)?;
            let ov = self.overrides();
            let out = self.env.step(&action, &ov, &mut self.beamformer)?;
            let surface = self.env.surface();
            for n in 0..surface.len() {
                self.max_beta_t = self.max_beta_t.max(surface.beta_t(n));
            }
            let r = &out.report;
            sum_rate += r.sum_rate();
            p_lat += r.latency_fraction();
            outage += r.outage_ok.iter().filter(|ok| !**ok).count() as f64
                / r.outage_ok.len().max(1) as f64;
            reward += out.transition.reward;
            if out.beamformer_status == SolveStatus::Infeasible {
                infeasible += 1;
            }
            if let Some(s) = sink.as_deref_mut() {
                s.extend_from_slice(&r.rate_i);
            }
            taken += 1;
            let Transition {
                next_state, done, ..
            } = out.transition.clone();
            if let Some(l) = self.learner.policy().observe(out.transition)? {
                losses.push(l);
            }
            state = next_state;
            if done {
                break;
            }
        }
        // the next episode starts one time budget later whatever the delivery time
        let window = self.env.params().time_budget_tmax;
        self.env.advance_mobility(window);
        let n = taken.max(1) as f64;
        Ok(EpisodeRecord {
            episode,
            scheme: self.scheme,
            seed: self.seed,
            sum_rate: sum_rate / n,
            p_latency: p_lat / n,
            reward: reward / n,
            outage_fraction: outage / n,
            steps: taken,
            infeasible,
            loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
        })
    }

    /// Greedy action for the environment's current state.
    pub fn greedy(&mut self) -> Result<Vec<usize>> {
        let s = self.env.encode();
        self.learner.policy().act(&s, false)
    }

    pub fn checkpoint_stem(&self, episode: usize) -> String {
        format!(
            "{}_seed{}_ep{}",
            self.scheme.name().to_ascii_lowercase(),
            self.seed,
            episode
        )
    }

    pub fn save_checkpoint(&self, dir: &Path, episode: usize) -> Result<()> {
        if let Some(a) = self.learner.ddqn() {
            a.save(dir, &self.checkpoint_stem(episode))?;
        }
        Ok(())
    }

    /// Replaces the learner with a saved agent. Bandit schemes keep no
    /// checkpoints and are rejected.
    pub fn load_checkpoint(&mut self, dir: &Path, stem: &str) -> Result<()> {
        match &mut self.learner {
            LearnerState::Ddqn(a) => a.load(dir, stem),
            LearnerState::Bandit(_) => Err(Error::InvalidParam {
                key: "scheme".into(),
                reason: format!("{} has no checkpoint", self.scheme),
            }),
        }
    }
}

/// Trains one seed for the manifest's episode budget.
pub fn run_seed(m: &Manifest, seed: u64, checkpoints: Option<&Path>) -> Result<(SeedRun, Trainer)> {
    let mut t = Trainer::new(m.scheme, &m.params, seed)?;
    let mut records = Vec::with_capacity(m.episodes);
    let mut rates = Vec::new();
    let cdf_from = m.episodes.saturating_sub(m.cdf_window);
    for ep in 0..m.episodes {
        let sink = (ep >= cdf_from).then_some(&mut rates);
        records.push(t.run_episode(ep, m.episodes, sink)?);
        if let Some(dir) = checkpoints {
            if m.checkpoint_every > 0 && (ep + 1) % m.checkpoint_every == 0 {
                t.save_checkpoint(dir, ep + 1)?;
            }
        }
    }
    let run = SeedRun {
        scheme: m.scheme,
        seed,
        records,
        rate_samples: rates,
        solver_calls: t.beamformer.calls(),
        max_beta_t: t.max_beta_t(),
    };
    Ok((run, t))
}

/// All seeds of a manifest, independent workers in seed order.
pub fn run_algorithm1(
    m: &Manifest,
    exec: Execution,
    checkpoints: Option<PathBuf>,
) -> Result<Vec<SeedRun>> {
    m.validate()?;
    par::try_map(&m.seeds, exec, |&seed| {
        run_seed(m, seed, checkpoints.as_deref()).map(|r| r.0)
    })
}

/// Several manifests at once, flattening (manifest, seed) into one work list.
pub fn run_many(ms: &[Manifest], exec: Execution) -> Result<Vec<Vec<SeedRun>>> {
    let jobs: Vec<(usize, u64)> = ms
        .iter()
        .enumerate()
        .flat_map(|(k, m)| m.seeds.iter().map(move |&s| (k, s)))
        .collect();
    for m in ms {
        m.validate()?;
    }
    let runs = par::try_map(&jobs, exec, |&(k, seed)| {
        run_seed(&ms[k], seed, None).map(|r| r.0)
    })?;
    let mut out: Vec<Vec<SeedRun>> = ms.iter().map(|_| Vec::new()).collect();
    for ((k, _), r) in jobs.into_iter().zip(runs) {
        out[k].push(r);
    }
    Ok(out)
}
