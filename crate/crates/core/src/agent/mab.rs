use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EpsilonSchedule;
use crate::rng::SimRng;

/// Independent ε-greedy bandits, one per action dimension, all fed the
/// same scalar reward.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MabAgent {
    means: Vec<Vec<f64>>,
    counts: Vec<Vec<u64>>,
    pub epsilon: f64,
    /// When set, ε follows it at every episode start.
    pub schedule: Option<EpsilonSchedule>,
    rng: SimRng,
}

impl MabAgent {
    pub fn new(branch_sizes: &[usize], epsilon: f64, rng: SimRng) -> Self {
        Self {
            means: branch_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            counts: branch_sizes.iter().map(|&n| vec![0; n]).collect(),
            epsilon,
            schedule: None,
            rng,
        }
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    /// Arms never pulled are tried first, lowest index first.
    pub fn act(&mut self, explore: bool) -> Vec<usize> {
        let eps = if explore { self.epsilon } else { 0.0 };
        (0..self.means.len())
            .map(|d| {
                let n = self.means[d].len();
                if eps > 0.0 && self.rng.random::<f64>() < eps {
                    self.rng.random_range(0..n)
                } else if let Some(k) = self.counts[d].iter().position(|c| *c == 0) {
                    k
                } else {
                    argmax(&self.means[d])
                }
            })
            .collect()
    }

    pub fn update(&mut self, action: &[usize], reward: f64) {
        for (d, &k) in action.iter().enumerate() {
            self.counts[d][k] += 1;
            let n = self.counts[d][k] as f64;
            self.means[d][k] += (reward - self.means[d][k]) / n;
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (k, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = k;
        }
    }
    best
}
