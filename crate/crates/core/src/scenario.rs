//! Road geometry, vehicle drops and V2V pairing.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::SimParams;
use crate::rng::{rng_for, tags, SimRng};

pub type Point = [f64; 3];

pub fn distance(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

const MAX_DROPS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub position: Point,
    pub speed: f64,
    /// +1 along x, −1 against it.
    pub heading: f64,
    pub lane: usize,
    pub vue: Option<usize>,
    pub v2v_tx: Option<usize>,
    pub v2v_rx: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct V2vPair {
    pub tx: usize,
    pub rx: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub bs_position: Point,
    pub ris_position: Point,
    pub road_length: f64,
    pub road_width: f64,
    pub vehicles: Vec<Vehicle>,
    /// Vehicle index of each VUE.
    pub vues: Vec<usize>,
    pub pairs: Vec<V2vPair>,
    pub rng_seed: u64,
}

impl Scenario {
    pub fn vue_position(&self, i: usize) -> &Point {
        &self.vehicles[self.vues[i]].position
    }

    pub fn tx_position(&self, v: usize) -> &Point {
        &self.vehicles[self.pairs[v].tx].position
    }

    pub fn rx_position(&self, v: usize) -> &Point {
        &self.vehicles[self.pairs[v].rx].position
    }

    pub fn bs_ris_distance(&self) -> f64 {
        distance(&self.bs_position, &self.ris_position)
    }

    /// Moves every vehicle along its lane, wrapping at the road ends.
    pub fn advance_mobility(&self, dt: f64) -> Scenario {
        let mut next = self.clone();
        let len = self.road_length;
        for v in &mut next.vehicles {
            v.position[0] = (v.position[0] + v.heading * v.speed * dt).rem_euclid(len);
        }
        next
    }
}

fn lane_centers(params: &SimParams) -> Vec<f64> {
    let lanes = params.lanes();
    let w = params.road_width / lanes as f64;
    (0..lanes).map(|k| (k as f64 + 0.5) * w).collect()
}

/// Per-lane intensity. The automatic value makes the expected population
/// twice the number of active roles.
pub fn lane_intensity(params: &SimParams) -> f64 {
    params.vehicle_intensity.unwrap_or_else(|| {
        let actives = params.n_vues_i + 2 * params.n_v2v_pairs_v;
        2.0 * actives as f64 / (params.lanes() as f64 * params.road_length)
    })
}

fn drop_vehicles(params: &SimParams, rng: &mut SimRng) -> Vec<Vehicle> {
    let mean = lane_intensity(params) * params.road_length;
    let mut vehicles = Vec::new();
    let per_direction = params.lanes_per_direction;
    for (lane, y) in lane_centers(params).into_iter().enumerate() {
        let count = if mean > 0.0 {
            Poisson::new(mean)
                .map(|d| d.sample(rng) as usize)
                .unwrap_or(0)
        } else {
            0
        };
        let heading = if lane < per_direction { 1.0 } else { -1.0 };
        for _ in 0..count {
            let x = rng.random_range(0.0..params.road_length);
            let speed = if params.speed_max > params.speed_min {
                rng.random_range(params.speed_min..params.speed_max)
            } else {
                params.speed_min
            };
            vehicles.push(Vehicle {
                position: [x, y, params.vehicle_height],
                speed,
                heading,
                lane,
                vue: None,
                v2v_tx: None,
                v2v_rx: None,
            });
        }
    }
    vehicles
}

/// Assigns roles; `None` if the drop cannot host them.
fn assign_roles(
    params: &SimParams,
    vehicles: &mut [Vehicle],
    rng: &mut SimRng,
) -> Option<(Vec<usize>, Vec<V2vPair>)> {
    let n = vehicles.len();
    let (i_count, v_count) = (params.n_vues_i, params.n_v2v_pairs_v);
    if n < i_count.max(2 * v_count) {
        return None;
    }
    let vues: Vec<usize> = sample(rng, n, i_count).into_iter().collect();
    let txs: Vec<usize> = sample(rng, n, v_count).into_iter().collect();
    let mut taken_rx = vec![false; n];
    let mut pairs = Vec::with_capacity(v_count);
    for &tx in &txs {
        let origin = vehicles[tx].position;
        let rx = (0..n)
            .filter(|&c| c != tx && !txs.contains(&c) && !taken_rx[c])
            .map(|c| (c, distance(&origin, &vehicles[c].position)))
            .filter(|&(_, d)| d <= params.broadcast_range && d > 0.0)
            .min_by(|a, b| a.1.total_cmp(&b.1))?
            .0;
        taken_rx[rx] = true;
        pairs.push(V2vPair { tx, rx });
    }
    for (i, &veh) in vues.iter().enumerate() {
        vehicles[veh].vue = Some(i);
    }
    for (v, p) in pairs.iter().enumerate() {
        vehicles[p.tx].v2v_tx = Some(v);
        vehicles[p.rx].v2v_rx = Some(v);
    }
    Some((vues, pairs))
}

/// Drops vehicles by a per-lane Poisson process and selects VUEs and V2V
/// pairs. Redraws a bounded number of times before giving up.
pub fn drop_scenario(params: &SimParams, seed: u64) -> Result<Scenario> {
    params.validate()?;
    let mut rng = rng_for(seed, tags::SCENARIO);
    for _ in 0..MAX_DROPS {
        let mut vehicles = drop_vehicles(params, &mut rng);
        if let Some((vues, pairs)) = assign_roles(params, &mut vehicles, &mut rng) {
            return Ok(Scenario {
                bs_position: params.bs_position,
                ris_position: params.ris_position,
                road_length: params.road_length,
                road_width: params.road_width,
                vehicles,
                vues,
                pairs,
                rng_seed: seed,
            });
        }
    }
    Err(Error::InsufficientVehicles {
        needed: params.n_vues_i.max(2 * params.n_v2v_pairs_v),
        attempts: MAX_DROPS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::default_params;

    #[test]
    fn same_seed_same_drop() {
        let p = default_params();
        assert_eq!(drop_scenario(&p, 7).unwrap(), drop_scenario(&p, 7).unwrap());
        assert_ne!(drop_scenario(&p, 7).unwrap(), drop_scenario(&p, 8).unwrap());
    }

    #[test]
    fn paper_counts_and_pairing() {
        let p = default_params();
        for seed in 0..20 {
            let s = drop_scenario(&p, seed).unwrap();
            assert_eq!(s.vues.len(), 20);
            assert_eq!(s.pairs.len(), 6);
            for pair in &s.pairs {
                assert_ne!(pair.tx, pair.rx);
                let d = distance(&s.vehicles[pair.tx].position, &s.vehicles[pair.rx].position);
                assert!(d <= p.broadcast_range);
            }
            for v in &s.vehicles {
                assert!((0.0..=p.road_length).contains(&v.position[0]));
                assert!((0.0..=p.road_width).contains(&v.position[1]));
            }
        }
    }

    #[test]
    fn receiver_is_nearest_eligible() {
        let p = default_params();
        let s = drop_scenario(&p, 3).unwrap();
        let txs: Vec<usize> = s.pairs.iter().map(|q| q.tx).collect();
        let mut taken: Vec<usize> = Vec::new();
        for pair in &s.pairs {
            let o = s.vehicles[pair.tx].position;
            let best = (0..s.vehicles.len())
                .filter(|c| *c != pair.tx && !txs.contains(c) && !taken.contains(c))
                .min_by(|a, b| {
                    distance(&o, &s.vehicles[*a].position)
                        .total_cmp(&distance(&o, &s.vehicles[*b].position))
                })
                .unwrap();
            assert_eq!(best, pair.rx);
            taken.push(pair.rx);
        }
    }

    #[test]
    fn empty_road_is_insufficient() {
        let mut p = default_params();
        p.road_length = 10.0;
        p.road_width = 10.0;
        p.vehicle_intensity = Some(0.0);
        assert!(matches!(
            drop_scenario(&p, 1),
            Err(Error::InsufficientVehicles { .. })
        ));
    }

    #[test]
    fn bs_ris_distance_default() {
        let s = drop_scenario(&default_params(), 0).unwrap();
        let want = (60f64 * 60.0 + 100.0 + 25.0).sqrt();
        assert!((s.bs_ris_distance() - want).abs() < 1e-12);
        assert!((s.bs_ris_distance() - 61.03).abs() < 0.01);
    }

    #[test]
    fn mobility_wraps_and_conserves() {
        let p = default_params();
        let mut s = drop_scenario(&p, 2).unwrap();
        s.vehicles[0].position[0] = 119.0;
        s.vehicles[0].speed = 20.0;
        s.vehicles[0].heading = 1.0;
        s.vehicles[1].position[0] = 30.0;
        s.vehicles[1].speed = 10.0;
        s.vehicles[1].heading = 1.0;
        let n = s.advance_mobility(0.1);
        assert!((n.vehicles[0].position[0] - 1.0).abs() < 1e-9);
        let m = s.advance_mobility(1.0);
        assert!((m.vehicles[1].position[0] - 40.0).abs() < 1e-12);
        assert_eq!(n.vehicles.len(), s.vehicles.len());
        assert_eq!(n.pairs, s.pairs);
        assert_eq!(n.vues, s.vues);

        let mut still = s.clone();
        still.vehicles.iter_mut().for_each(|v| v.speed = 0.0);
        assert_eq!(still.advance_mobility(5.0).vehicles, still.vehicles);
    }
}
