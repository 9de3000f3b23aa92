//! Arrival generation.
//!
//! Randomness comes from ChaCha8 seeded with the scenario seed
//! (`ChaCha8Rng::seed_from_u64`). Per vehicle the draws are, in order: the
//! exponential headway, the arm, the lane and the turn. The stream does not
//! depend on the policy, so all policies see the same arrivals for a seed.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use serde::{Deserialize, Serialize};

use super::ScenarioConfig;
use crate::scenario::{Arm, Turn};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    /// Generation order, starting at 0.
    pub id: usize,
    /// Time the vehicle reaches the arm entry, s.
    pub time: f64,
    pub arm: Arm,
    pub lane: usize,
    pub turn: Turn,
}

/// Poisson arrivals at the configured volume, spread uniformly over arms and
/// lanes, turns drawn from the proportions. The engines hold a vehicle back
/// while its entry position is taken.
pub fn generate_traffic(cfg: &ScenarioConfig) -> Vec<Arrival> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let headway = Exp::new(cfg.volume / 3600.0).expect("positive volume");
    let turns = WeightedIndex::new(cfg.proportions).expect("valid proportions");
    let n_lanes = cfg.geometry.n_lanes;
    let mut t = 0.0;
    (0..cfg.n_total)
        .map(|id| {
            t += headway.sample(&mut rng);
            let arm = Arm::ALL[rng.random_range(0..4)];
            let lane = rng.random_range(1..=n_lanes);
            let turn = Turn::ALL[turns.sample(&mut rng)];
            Arrival { id, time: t, arm, lane, turn }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let cfg = ScenarioConfig { seed: 7, ..Default::default() };
        assert_eq!(generate_traffic(&cfg), generate_traffic(&cfg));
        let other = ScenarioConfig { seed: 8, ..Default::default() };
        assert_ne!(generate_traffic(&cfg), generate_traffic(&other));
    }

    #[test]
    fn mean_headway_matches_volume() {
        let cfg = ScenarioConfig { volume: 3600.0, n_total: 20000, n_warm: 0, ..Default::default() };
        let a = generate_traffic(&cfg);
        let mean = a.last().unwrap().time / a.len() as f64;
        assert!((mean - 1.0).abs() < 0.03, "{mean}");
        assert!(a.windows(2).all(|w| w[0].time <= w[1].time));
    }
}
