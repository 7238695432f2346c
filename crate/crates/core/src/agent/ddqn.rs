use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use starv2x_autodiff::optim::clip_grad_norm;
use starv2x_autodiff::{
    checkpoint, NetworkSpec, Optimizer, OptimizerConfig, ParamSet, QNetwork, Tape, Tensor, Variant,
};

use super::mab::argmax;
use super::replay::ReplayBuffer;
use super::EpsilonSchedule;
use crate::env::{state_len, token_groups, Transition};
use crate::error::{Error, Result};
use crate::params::SimParams;
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub discount: f64,
    pub batch_size: usize,
    pub eps_initial: f64,
    pub eps_final: f64,
    /// Share of the episode budget over which ε decays linearly.
    pub eps_decay_fraction: f64,
    pub target_sync: usize,
    pub replay_capacity: usize,
    /// No training until the buffer holds this many transitions.
    pub warmup: usize,
    /// Zero disables clipping.
    pub grad_clip: f64,
    pub reward_scale: f64,
    pub reward_offset: f64,
    /// Plain DQN targets instead of decoupled selection/evaluation.
    pub dqn_target: bool,
    pub optimizer: OptimizerConfig,
    pub network: NetworkSpec,
}

impl AgentConfig {
    pub fn from_params(params: &SimParams, variant: Variant, head_sizes: Vec<usize>) -> Self {
        let network = NetworkSpec {
            variant,
            input_len: state_len(params),
            tokens: token_groups(params),
            model_dim: params.model_dim,
            res_blocks: params.res_blocks,
            heads: params.attention_heads,
            fusion: vec![params.fusion_width],
            head_sizes,
        };
        Self {
            discount: params.discount_zeta,
            batch_size: params.batch_size,
            eps_initial: params.eps_initial,
            eps_final: params.eps_final,
            eps_decay_fraction: params.eps_decay_fraction,
            target_sync: params.target_sync_sq,
            replay_capacity: params.replay_capacity,
            warmup: params.warmup_transitions,
            grad_clip: params.grad_clip,
            reward_scale: params.reward_scale,
            reward_offset: params.reward_offset,
            dqn_target: false,
            optimizer: params.optimizer_config(),
            network,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| {
            Err(Error::InvalidParam {
                key: key.into(),
                reason: reason.into(),
            })
        };
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return bad("discount", "must lie in (0, 1]");
        }
        for (k, e) in [
            ("eps_initial", self.eps_initial),
            ("eps_final", self.eps_final),
        ] {
            if !(0.0..=1.0).contains(&e) {
                return bad(k, "must lie in [0, 1]");
            }
        }
        if self.batch_size == 0 || self.target_sync == 0 {
            return bad("batch_size", "batch size and sync period must be positive");
        }
        self.network.validate()?;
        Ok(())
    }

    pub fn schedule(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            initial: self.eps_initial,
            last: self.eps_final,
            decay_fraction: self.eps_decay_fraction,
        }
    }

    pub fn epsilon_at(&self, episode: usize, total: usize) -> f64 {
        self.schedule().at(episode, total)
    }
}

/// ε-greedy per dimension; ties go to the lowest index.
pub fn epsilon_greedy<R: Rng + ?Sized>(heads: &[&[f64]], epsilon: f64, rng: &mut R) -> Vec<usize> {
    heads
        .iter()
        .map(|q| {
            if epsilon > 0.0 && rng.random::<f64>() < epsilon {
                rng.random_range(0..q.len())
            } else {
                argmax(q)
            }
        })
        .collect()
}

fn stack(rows: impl Iterator<Item = Vec<f64>>, cols: usize) -> Result<Tensor> {
    let data: Vec<f64> = rows.flatten().collect();
    Ok(Tensor::from_rows(data.len() / cols.max(1), cols, data)?)
}

fn next_states(net: &QNetwork, batch: &[&Transition]) -> Result<Tensor> {
    stack(
        batch.iter().map(|t| t.next_state.clone()),
        net.spec().input_len,
    )
}

/// `r + ζ max_a' Q(s', a'; w')` per sample and dimension.
pub fn td_target_dqn(
    net: &QNetwork,
    target: &ParamSet,
    batch: &[&Transition],
    discount: f64,
) -> Result<Vec<Vec<f64>>> {
    let q = net.forward(target, &next_states(net, batch)?)?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(s, t)| {
            net.split_heads(q.row(s))
                .into_iter()
                .map(|h| {
                    if t.done {
                        t.reward
                    } else {
                        t.reward + discount * h[argmax(h)]
                    }
                })
                .collect()
        })
        .collect())
}

/// `r + ζ Q(s', argmax_a' Q(s', a'; w); w')` per sample and dimension.
pub fn td_target_ddqn(
    net: &QNetwork,
    online: &ParamSet,
    target: &ParamSet,
    batch: &[&Transition],
    discount: f64,
) -> Result<Vec<Vec<f64>>> {
    let x = next_states(net, batch)?;
    let qo = net.forward(online, &x)?;
    let qt = net.forward(target, &x)?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(s, t)| {
            net.split_heads(qo.row(s))
                .into_iter()
                .zip(net.split_heads(qt.row(s)))
                .map(|(ho, ht)| {
                    if t.done {
                        t.reward
                    } else {
                        t.reward + discount * ht[argmax(ho)]
                    }
                })
                .collect()
        })
        .collect())
}

/// Counters and rng written next to a checkpoint so training can resume.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub episode: usize,
    pub epsilon: f64,
    pub train_steps: u64,
    pub sync_count: u64,
    pub rng: SimRng,
    pub optimizer: Optimizer,
}

#[derive(Debug, Clone)]
pub struct DdqnAgent {
    config: AgentConfig,
    net: QNetwork,
    online: ParamSet,
    target: ParamSet,
    optimizer: Optimizer,
    buffer: ReplayBuffer,
    rng: SimRng,
    epsilon: f64,
    episode: usize,
    train_steps: u64,
    sync_count: u64,
}

impl DdqnAgent {
    /// `net_rng` draws the initial weights; `rng` drives exploration and sampling.
    pub fn new(config: AgentConfig, net_rng: &mut SimRng, rng: SimRng) -> Result<Self> {
        config.validate()?;
        let (net, online) = QNetwork::new(config.network.clone(), net_rng)?;
        let target = online.clone();
        Ok(Self {
            optimizer: Optimizer::new(config.optimizer),
            buffer: ReplayBuffer::new(config.replay_capacity),
            epsilon: config.eps_initial,
            config,
            net,
            online,
            target,
            rng,
            episode: 0,
            train_steps: 0,
            sync_count: 0,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn network(&self) -> &QNetwork {
        &self.net
    }

    pub fn online(&self) -> &ParamSet {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut ParamSet {
        &mut self.online
    }

    pub fn target(&self) -> &ParamSet {
        &self.target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn set_epsilon(&mut self, eps: f64) {
        self.epsilon = eps.clamp(0.0, 1.0);
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn sync_count(&self) -> u64 {
        self.sync_count
    }

    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        let x = Tensor::row_vector(state);
        Ok(self.net.forward(&self.online, &x)?.into_data())
    }

    pub fn select_action(&mut self, state: &[f64], epsilon: f64) -> Result<Vec<usize>> {
        let q = self.q_values(state)?;
        let heads = self.net.split_heads(&q);
        Ok(epsilon_greedy(&heads, epsilon, &mut self.rng))
    }

    /// Stores a transition with its reward shifted and scaled.
    pub fn remember(&mut self, mut t: Transition) {
        t.reward = (t.reward - self.config.reward_offset) * self.config.reward_scale;
        self.buffer.push(t);
    }

    pub fn sync_target(&mut self) -> Result<()> {
        self.target.copy_from(&self.online)?;
        self.sync_count += 1;
        Ok(())
    }

    /// One gradient step on a uniform minibatch. Syncs the target network
    /// every `target_sync` calls.
    pub fn train_step(&mut self) -> Result<f64> {
        let batch = self.buffer.sample(self.config.batch_size, &mut self.rng)?;
        let targets = if self.config.dqn_target {
            td_target_dqn(&self.net, &self.target, &batch, self.config.discount)?
        } else {
            td_target_ddqn(
                &self.net,
                &self.online,
                &self.target,
                &batch,
                self.config.discount,
            )?
        };
        let out = self.net.spec().output_len();
        let sizes = &self.net.spec().head_sizes;
        let mut target = vec![0.0; batch.len() * out];
        let mut mask = vec![0.0; batch.len() * out];
        for (s, (t, tg)) in batch.iter().zip(&targets).enumerate() {
            let mut offset = s * out;
            for ((&a, &y), &n) in t.action.iter().zip(tg).zip(sizes) {
                target[offset + a] = y;
                mask[offset + a] = 1.0;
                offset += n;
            }
        }
        let states = stack(
            batch.iter().map(|t| t.state.clone()),
            self.net.spec().input_len,
        )?;
        let mut tape = Tape::new();
        let p = tape.params(&self.online)?;
        let x = tape.input(states)?;
        let q = self.net.forward_tape(&mut tape, &p, x)?;
        let loss = tape.masked_mse(q, &target, &mask)?;
        let value = tape.value(loss).data()[0];
        let mut grads = tape.backward(loss)?;
        if self.config.grad_clip > 0.0 {
            clip_grad_norm(&mut grads, self.config.grad_clip);
        }
        self.optimizer.step(&mut self.online, &grads);
        self.train_steps += 1;
        if self.train_steps % self.config.target_sync as u64 == 0 {
            self.sync_target()?;
        }
        Ok(value)
    }

    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            episode: self.episode,
            epsilon: self.epsilon,
            train_steps: self.train_steps,
            sync_count: self.sync_count,
            rng: self.rng.clone(),
            optimizer: self.optimizer.clone(),
        }
    }

    /// Writes `<stem>.online.ckpt`, `<stem>.target.ckpt` and `<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let spec = self.net.spec();
        for (suffix, ps) in [("online", &self.online), ("target", &self.target)] {
            let mut w = BufWriter::new(File::create(dir.join(format!("{stem}.{suffix}.ckpt")))?);
            checkpoint::save(&mut w, spec, ps)?;
        }
        let w = BufWriter::new(File::create(dir.join(format!("{stem}.json")))?);
        serde_json::to_writer_pretty(w, &self.sidecar())?;
        Ok(())
    }

    /// Restores weights, counters and rng. The replay buffer starts empty.
    pub fn load(&mut self, dir: &Path, stem: &str) -> Result<()> {
        let read = |suffix: &str| -> Result<ParamSet> {
            let mut r = BufReader::new(File::open(dir.join(format!("{stem}.{suffix}.ckpt")))?);
            let (spec, ps) = checkpoint::load(&mut r)?;
            if &spec != self.net.spec() {
                return Err(Error::InvalidParam {
                    key: "checkpoint".into(),
                    reason: "network spec differs from the agent's".into(),
                });
            }
            Ok(ps)
        };
        let online = read("online")?;
        let target = read("target")?;
        let side: Sidecar = serde_json::from_reader(BufReader::new(File::open(
            dir.join(format!("{stem}.json")),
        )?))?;
        self.online = online;
        self.target = target;
        self.episode = side.episode;
        self.epsilon = side.epsilon;
        self.train_steps = side.train_steps;
        self.sync_count = side.sync_count;
        self.rng = side.rng;
        self.optimizer = side.optimizer;
        Ok(())
    }

    pub(crate) fn begin(&mut self, episode: usize, total: usize) {
        self.episode = episode;
        self.epsilon = self.config.epsilon_at(episode, total);
    }

    pub(crate) fn ready(&self) -> bool {
        self.buffer.len() >= self.config.warmup.max(self.config.batch_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::chi_square_uniform;
    use rand::SeedableRng;
    use starv2x_autodiff::OptimizerConfig;

    fn tabular_config(discount: f64) -> AgentConfig {
        AgentConfig {
            discount,
            batch_size: 3,
            eps_initial: 1.0,
            eps_final: 0.02,
            eps_decay_fraction: 0.3,
            target_sync: 5,
            replay_capacity: 100,
            warmup: 3,
            grad_clip: 0.0,
            reward_scale: 1.0,
            reward_offset: 0.0,
            dqn_target: false,
            optimizer: OptimizerConfig::sgd(0.01),
            network: NetworkSpec {
                variant: Variant::Vanilla,
                input_len: 2,
                tokens: vec![],
                model_dim: 2,
                res_blocks: 0,
                heads: 1,
                fusion: vec![],
                head_sizes: vec![2],
            },
        }
    }

    /// Linear net whose Q(s, ·) is row `s` of `table`.
    fn tabular(table: [[f64; 2]; 2]) -> (QNetwork, ParamSet) {
        let mut rng = SimRng::seed_from_u64(0);
        let (net, mut ps) = QNetwork::new(tabular_config(0.9).network, &mut rng).unwrap();
        ps.zero_all();
        ps.get_mut(0)
            .data_mut()
            .copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        ps.get_mut(2).data_mut().copy_from_slice(&[
            table[0][0],
            table[0][1],
            table[1][0],
            table[1][1],
        ]);
        (net, ps)
    }

    fn tr(s: usize, a: usize, r: f64, n: usize, done: bool) -> Transition {
        let e = |k: usize| {
            if k == 0 {
                vec![1.0, 0.0]
            } else {
                vec![0.0, 1.0]
            }
        };
        Transition {
            state: e(s),
            action: vec![a],
            reward: r,
            next_state: e(n),
            done,
        }
    }

    fn agent(seed: u64) -> DdqnAgent {
        let cfg = AgentConfig {
            network: NetworkSpec {
                variant: Variant::Attention,
                input_len: 6,
                tokens: vec![TokenGroup { count: 3, width: 2 }],
                model_dim: 4,
                res_blocks: 1,
                heads: 2,
                fusion: vec![8],
                head_sizes: vec![3, 2, 4],
            },
            ..tabular_config(0.9)
        };
        DdqnAgent::new(
            cfg,
            &mut SimRng::seed_from_u64(seed),
            SimRng::seed_from_u64(seed + 1),
        )
        .unwrap()
    }
    use starv2x_autodiff::TokenGroup;

    #[test]
    fn tabular_targets_match_q_learning() {
        let table = [[0.3, -1.2], [2.5, 0.7]];
        let (net, ps) = tabular(table);
        let batch = [tr(0, 1, 0.4, 1, false), tr(1, 0, -0.2, 0, false)];
        let refs: Vec<&Transition> = batch.iter().collect();
        let y = td_target_dqn(&net, &ps, &refs, 0.9).unwrap();
        assert!((y[0][0] - (0.4 + 0.9 * 2.5)).abs() < 1e-12);
        assert!((y[1][0] - (-0.2 + 0.9 * 0.3)).abs() < 1e-12);
    }

    #[test]
    fn zero_discount_and_terminal_give_reward() {
        let (net, ps) = tabular([[5.0, 1.0], [3.0, 9.0]]);
        let batch = [tr(0, 1, 0.4, 1, false), tr(1, 0, -0.2, 0, true)];
        let refs: Vec<&Transition> = batch.iter().collect();
        for y in [
            td_target_dqn(&net, &ps, &refs, 0.0).unwrap(),
            td_target_ddqn(&net, &ps, &ps, &refs, 0.0).unwrap(),
        ] {
            assert_eq!(y[0][0], 0.4);
            assert_eq!(y[1][0], -0.2);
        }
        let y = td_target_ddqn(&net, &ps, &ps, &refs, 0.9).unwrap();
        assert_eq!(y[1][0], -0.2);
    }

    #[test]
    fn ddqn_equals_dqn_when_nets_coincide() {
        let a = agent(4);
        let mut rng = SimRng::seed_from_u64(9);
        let batch: Vec<Transition> = (0..5)
            .map(|_| Transition {
                state: (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
                action: vec![0, 1, 2],
                reward: rng.random_range(-1.0..1.0),
                next_state: (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
                done: false,
            })
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let d = td_target_dqn(a.network(), a.online(), &refs, 0.9).unwrap();
        let dd = td_target_ddqn(a.network(), a.online(), a.online(), &refs, 0.9).unwrap();
        assert_eq!(d, dd);
    }

    #[test]
    fn selection_and_evaluation_decouple() {
        // online prefers action 0 in state 1, target prefers action 1
        let (net, online) = tabular([[0.0, 0.0], [4.0, 1.0]]);
        let (_, target) = tabular([[0.0, 0.0], [2.0, 7.0]]);
        let batch = [tr(0, 0, 1.0, 1, false)];
        let refs: Vec<&Transition> = batch.iter().collect();
        let y = td_target_ddqn(&net, &online, &target, &refs, 0.5).unwrap();
        assert_eq!(y[0][0], 1.0 + 0.5 * 2.0);
        let y = td_target_dqn(&net, &target, &refs, 0.5).unwrap();
        assert_eq!(y[0][0], 1.0 + 0.5 * 7.0);
    }

    #[test]
    fn uniform_exploration() {
        let mut a = agent(1);
        let state = vec![0.1; 6];
        let sizes = [3, 2, 4];
        let mut counts: Vec<Vec<usize>> = sizes.iter().map(|&n| vec![0; n]).collect();
        let n = 100_000;
        for _ in 0..n {
            for (d, k) in a
                .select_action(&state, 1.0)
                .unwrap()
                .into_iter()
                .enumerate()
            {
                counts[d][k] += 1;
            }
        }
        for (c, &k) in counts.iter().zip(&sizes) {
            for &x in c {
                let f = x as f64 / n as f64;
                assert!((f - 1.0 / k as f64).abs() < 0.03);
            }
            assert!(chi_square_uniform(c) > 1e-3);
        }
    }

    #[test]
    fn greedy_picks_argmax_and_lowest_tie() {
        let mut rng = SimRng::seed_from_u64(0);
        let h1 = [0.1, 0.9, 0.3];
        let h2 = [2.0, -1.0];
        assert_eq!(epsilon_greedy(&[&h1, &h2], 0.0, &mut rng), vec![1, 0]);
        let tie = [0.5, 0.7, 0.7, 0.1];
        for _ in 0..100 {
            assert_eq!(epsilon_greedy(&[&tie], 0.0, &mut rng), vec![1]);
        }
    }

    #[test]
    fn sync_copies_exactly_and_respects_period() {
        let mut a = agent(2);
        let mut rng = SimRng::seed_from_u64(5);
        for _ in 0..20 {
            a.remember(Transition {
                state: (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
                action: vec![
                    rng.random_range(0..3),
                    rng.random_range(0..2),
                    rng.random_range(0..4),
                ],
                reward: rng.random_range(-1.0..1.0),
                next_state: (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
                done: false,
            });
        }
        let before = a.buffer().items().to_vec();
        for k in 1..=12 {
            let loss = a.train_step().unwrap();
            assert!(loss >= 0.0);
            if k % 5 == 0 {
                assert_eq!(a.online(), a.target());
            } else {
                assert_ne!(a.online(), a.target());
            }
        }
        assert_eq!(a.sync_count(), 2);
        assert_eq!(a.buffer().items(), &before[..]);
    }

    #[test]
    fn loss_descends_on_fixed_buffer() {
        let mut a = agent(3);
        a.config.target_sync = 1_000;
        a.config.optimizer = OptimizerConfig::sgd(1e-3);
        a.optimizer = Optimizer::new(a.config.optimizer);
        let mut rng = SimRng::seed_from_u64(8);
        for _ in 0..3 {
            a.remember(Transition {
                state: (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
                action: vec![0, 1, 3],
                reward: rng.random_range(0.5..1.5),
                next_state: (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
                done: true,
            });
        }
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            let l = a.train_step().unwrap();
            assert!(l < last, "{l} !< {last}");
            last = l;
        }
    }

    #[test]
    fn underflow_is_reported() {
        let mut a = agent(6);
        assert!(matches!(
            a.train_step(),
            Err(Error::BufferUnderflow { have: 0, need: 3 })
        ));
    }

    #[test]
    fn epsilon_schedule() {
        let c = tabular_config(0.9);
        assert_eq!(c.epsilon_at(0, 100), 1.0);
        assert!((c.epsilon_at(15, 100) - 0.51).abs() < 1e-12);
        assert!((c.epsilon_at(30, 100) - 0.02).abs() < 1e-12);
        assert!((c.epsilon_at(99, 100) - 0.02).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut a = agent(7);
        let mut rng = SimRng::seed_from_u64(1);
        for _ in 0..6 {
            a.remember(Transition {
                state: (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
                action: vec![1, 1, 1],
                reward: 0.3,
                next_state: (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
                done: false,
            });
        }
        a.train_step().unwrap();
        a.train_step().unwrap();
        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path(), "agent").unwrap();
        let mut b = agent(99);
        b.load(dir.path(), "agent").unwrap();
        assert_eq!(a.online(), b.online());
        assert_eq!(a.target(), b.target());
        assert_eq!(b.train_steps(), 2);
        let s = vec![0.2; 6];
        assert_eq!(
            a.select_action(&s, 0.5).unwrap(),
            b.select_action(&s, 0.5).unwrap()
        );
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut c = tabular_config(0.0);
        assert!(c.validate().is_err());
        c.discount = 1.0;
        assert!(c.validate().is_ok());
        c.eps_final = 1.5;
        assert!(c.validate().is_err());
    }
}
