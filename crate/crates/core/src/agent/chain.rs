//! Four-state chain used to sanity-check the learners against value iteration.

use rand::{Rng, SeedableRng};
use starv2x_autodiff::{NetworkSpec, OptimizerConfig, TokenGroup, Variant};

use super::ddqn::{AgentConfig, DdqnAgent};
use super::Policy;
use crate::env::Transition;
use crate::error::Result;
use crate::rng::{rng_for, tags, SimRng};

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// Moving left at the left end pays a little, moving right at the right
/// end pays more but is far away.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainMdp {
    pub states: usize,
    pub left_reward: f64,
    pub right_reward: f64,
    pub discount: f64,
}

impl Default for ChainMdp {
    fn default() -> Self {
        Self {
            states: 4,
            left_reward: 0.2,
            right_reward: 1.0,
            discount: 0.5,
        }
    }
}

impl ChainMdp {
    pub fn step(&self, s: usize, a: usize) -> (usize, f64) {
        let last = self.states - 1;
        match (s, a) {
            (0, LEFT) => (0, self.left_reward),
            (s, LEFT) => (s - 1, 0.0),
            (s, _) if s == last => (last, self.right_reward),
            (s, _) => (s + 1, 0.0),
        }
    }

    pub fn encode(&self, s: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.states];
        x[s] = 1.0;
        x
    }

    /// Optimal Q-table by value iteration.
    pub fn value_iteration(&self) -> Vec<[f64; 2]> {
        let mut q = vec![[0.0f64; 2]; self.states];
        for _ in 0..10_000 {
            let v: Vec<f64> = q.iter().map(|r| r[0].max(r[1])).collect();
            let mut delta: f64 = 0.0;
            for (s, row) in q.iter_mut().enumerate() {
                for (a, cell) in row.iter_mut().enumerate() {
                    let (n, r) = self.step(s, a);
                    let new = r + self.discount * v[n];
                    delta = delta.max((new - *cell).abs());
                    *cell = new;
                }
            }
            if delta < 1e-14 {
                break;
            }
        }
        q
    }

    pub fn optimal_policy(&self) -> Vec<usize> {
        self.value_iteration()
            .iter()
            .map(|r| usize::from(r[1] > r[0]))
            .collect()
    }

    pub fn agent_config(&self, variant: Variant) -> AgentConfig {
        AgentConfig {
            discount: self.discount,
            batch_size: 16,
            eps_initial: 1.0,
            eps_final: 0.1,
            eps_decay_fraction: 0.5,
            target_sync: 25,
            replay_capacity: 2_000,
            warmup: 32,
            grad_clip: 10.0,
            reward_scale: 1.0,
            reward_offset: 0.0,
            dqn_target: false,
            optimizer: OptimizerConfig::adam(5e-3),
            network: NetworkSpec {
                variant,
                input_len: self.states,
                tokens: vec![TokenGroup {
                    count: self.states,
                    width: 1,
                }],
                model_dim: 8,
                res_blocks: 1,
                heads: 2,
                fusion: vec![16],
                head_sizes: vec![2],
            },
        }
    }

    /// Trains from uniformly random starts and returns the greedy policy.
    pub fn train(
        &self,
        variant: Variant,
        seed: u64,
        episodes: usize,
        steps: usize,
    ) -> Result<Vec<usize>> {
        let mut net_rng = rng_for(seed, tags::NETWORK);
        let mut agent = DdqnAgent::new(
            self.agent_config(variant),
            &mut net_rng,
            rng_for(seed, tags::AGENT),
        )?;
        let mut env_rng = SimRng::seed_from_u64(seed ^ 0xC4A1);
        for ep in 0..episodes {
            agent.begin_episode(ep, episodes);
            let mut s = env_rng.random_range(0..self.states);
            for _ in 0..steps {
                let x = self.encode(s);
                let a = agent.act(&x, true)?;
                let (n, r) = self.step(s, a[0]);
                agent.observe(Transition {
                    state: x,
                    action: a,
                    reward: r,
                    next_state: self.encode(n),
                    done: false,
                })?;
                s = n;
            }
        }
        (0..self.states)
            .map(|s| Ok(agent.act(&self.encode(s), false)?[0]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optimal_policy_is_mixed() {
        let m = ChainMdp::default();
        let q = m.value_iteration();
        assert!((q[3][RIGHT] - 2.0).abs() < 1e-12);
        assert!((q[0][LEFT] - 0.4).abs() < 1e-12);
        assert!((q[0][RIGHT] - 0.25).abs() < 1e-12);
        assert_eq!(m.optimal_policy(), vec![LEFT, RIGHT, RIGHT, RIGHT]);
    }

    #[test]
    fn both_variants_recover_optimal_policy() {
        let m = ChainMdp::default();
        let want = m.optimal_policy();
        for variant in [Variant::Vanilla, Variant::Attention] {
            for seed in 0..5 {
                assert_eq!(
                    m.train(variant, seed, 150, 20).unwrap(),
                    want,
                    "{variant:?} seed {seed}"
                );
            }
        }
    }
}
