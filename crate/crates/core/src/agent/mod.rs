//! Learners: DDQN over a factored Q-network and a per-dimension bandit.

pub mod chain;
pub mod ddqn;
pub mod mab;
pub mod replay;

pub use ddqn::{epsilon_greedy, td_target_ddqn, td_target_dqn, AgentConfig, DdqnAgent, Sidecar};
pub use mab::{argmax, MabAgent};
pub use replay::ReplayBuffer;

use serde::{Deserialize, Serialize};

use crate::env::Transition;
use crate::error::Result;

/// Linear decay from `initial` to `last` over the first `decay_fraction`
/// of the episode budget, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub initial: f64,
    pub last: f64,
    pub decay_fraction: f64,
}

impl EpsilonSchedule {
    pub fn at(&self, episode: usize, total: usize) -> f64 {
        let span = self.decay_fraction * total as f64;
        if span <= 0.0 {
            return self.last;
        }
        let frac = (episode as f64 / span).min(1.0);
        self.initial + (self.last - self.initial) * frac
    }
}

/// What the training loop needs from a learner.
pub trait Policy {
    fn act(&mut self, state: &[f64], explore: bool) -> Result<Vec<usize>>;
    /// Feeds one transition; returns the training loss when a step ran.
    fn observe(&mut self, t: Transition) -> Result<Option<f64>>;
    fn begin_episode(&mut self, episode: usize, total: usize);
}

impl Policy for DdqnAgent {
    fn act(&mut self, state: &[f64], explore: bool) -> Result<Vec<usize>> {
        let eps = if explore { self.epsilon() } else { 0.0 };
        self.select_action(state, eps)
    }

    fn observe(&mut self, t: Transition) -> Result<Option<f64>> {
        self.remember(t);
        if self.ready() {
            self.train_step().map(Some)
        } else {
            Ok(None)
        }
    }

    fn begin_episode(&mut self, episode: usize, total: usize) {
        self.begin(episode, total);
    }
}

impl Policy for MabAgent {
    fn act(&mut self, _state: &[f64], explore: bool) -> Result<Vec<usize>> {
        Ok(MabAgent::act(self, explore))
    }

    fn observe(&mut self, t: Transition) -> Result<Option<f64>> {
        self.update(&t.action, t.reward);
        Ok(None)
    }

    fn begin_episode(&mut self, episode: usize, total: usize) {
        if let Some(s) = self.schedule {
            self.epsilon = s.at(episode, total);
        }
    }
}
