use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::beamformer::{ScaBeamformer, ScaOptions};
use crate::env::{Env, StepOverrides};
use crate::error::{Error, Result};
use crate::par::{self, Execution};

pub const MAX_ENUMERATION: u128 = 1_000_000;

/// Relative slack under which two candidate values count as tied.
const TIE_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// Lowest-index maximizer.
    pub action: Vec<usize>,
    pub value: f64,
    /// Every candidate within the tie tolerance of the best, in index order.
    pub optima: Vec<Vec<usize>>,
    /// Distinct (surface, spectrum, power) combinations actually solved.
    pub distinct: usize,
}

/// Exhaustive one-step search over the full joint catalog on the
/// environment's current channel.
pub fn brute_force_oracle(env: &Env, exec: Execution) -> Result<OracleResult> {
    let cat = env.catalog();
    let card = cat.cardinality();
    if card > MAX_ENUMERATION {
        return Err(Error::SpaceTooLarge(card));
    }
    let candidates: Vec<Vec<usize>> = (0..card).map(|k| cat.unravel(k)).collect();
    brute_force_over(env, &candidates, exec)
}

/// Same search over an explicit candidate list. Each distinct control
/// setting is solved once with a cold-started SCA beamformer.
pub fn brute_force_over(
    env: &Env,
    candidates: &[Vec<usize>],
    exec: Execution,
) -> Result<OracleResult> {
    if candidates.is_empty() {
        return Err(Error::InvalidAction("empty candidate list".into()));
    }
    let ov = StepOverrides::default();
    let mut keys = Vec::with_capacity(candidates.len());
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut controls = Vec::new();
    for idx in candidates {
        let action = env.catalog().decode(idx)?;
        let c = env.next_controls(&action, &ov)?;
        let key = format!("{:?}|{:?}|{:?}", c.0, c.1, c.2);
        let next = index.len();
        let slot = *index.entry(key).or_insert(next);
        if slot == next {
            controls.push(c);
        }
        keys.push(slot);
    }
    let opts = ScaOptions::from_params(env.params());
    let values = par::try_map(&controls, exec, |(surface, spectrum, power)| {
        let mut bf = ScaBeamformer::new(opts);
        bf.warm_start = false;
        env.evaluate_controls(
            env.channels(),
            surface,
            spectrum,
            power,
            Some(&mut bf),
            None,
        )
        .map(|e| e.reward)
    })?;
    let mut best = 0;
    for (k, &slot) in keys.iter().enumerate() {
        if values[slot] > values[keys[best]] {
            best = k;
        }
    }
    let value = values[keys[best]];
    let slack = TIE_RTOL * value.abs().max(f64::MIN_POSITIVE);
    let optima = keys
        .iter()
        .zip(candidates)
        .filter(|(slot, _)| values[**slot] >= value - slack)
        .map(|(_, c)| c.clone())
        .collect::<Vec<_>>();
    // the lowest-index member of the tie set wins
    let action = optima[0].clone();
    Ok(OracleResult {
        action,
        value,
        optima,
        distinct: controls.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldOut {
    pub draw: u64,
    pub agent: f64,
    pub oracle: f64,
}

/// Seeds of held-out channel draws; disjoint from the training stream.
pub fn held_out_draws(seed: u64, count: usize) -> Vec<u64> {
    (0..count as u64)
        .map(|k| crate::rng::derive_seed(seed ^ 0x5eed_0f_4e1d, (1 << 40) + k))
        .collect()
}

/// Greedy one-step value of the trained learner on each frozen draw, next to
/// the exhaustive optimum. Both use cold-started SCA beamformers.
pub fn greedy_vs_oracle(
    t: &mut super::Trainer,
    draws: &[u64],
    exec: Execution,
) -> Result<Vec<HeldOut>> {
    let opts = ScaOptions::from_params(t.env.params());
    draws
        .iter()
        .map(|&draw| {
            t.env.reset(draw)?;
            let idx = t.greedy()?;
            let action = t.env.catalog().decode(&idx)?;
            let mut bf = ScaBeamformer::new(opts);
            bf.warm_start = false;
            let agent = t
                .env
                .one_step(&action, &StepOverrides::default(), Some(&mut bf))?
                .reward;
            let oracle = brute_force_oracle(&t.env, exec)?.value;
            Ok(HeldOut {
                draw,
                agent,
                oracle,
            })
        })
        .collect()
}
