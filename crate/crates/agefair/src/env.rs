//! The MDP facade over the simulator: observations, the discrete MCW
//! action set of node 0, the age-fairness reward, and interval stepping.
//!
//! One environment step = one observation interval: the chosen action sets
//! node 0's MCW, the population and every vehicle's MCW chain advance, one
//! interval of contention runs, and the reward is the age-fairness utility
//! of that completed interval.

use rand::Rng;
use thiserror::Error;

use crate::dynamics::{select_departures, DynamicsError, McwChain, PopulationModel};
use crate::sim::{run_interval, IntervalStats, Node, SimClock, SimConfig, SimError};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("action index {0} outside [0, {max}]", max = ActionSpace::COUNT - 1)]
    InvalidAction(usize),
    #[error("degenerate interval: total average age is zero")]
    DegenerateInterval,
    #[error("environment must be reset before stepping")]
    NotReset,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// The seven MCW values node 0 may choose from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionSpace;

impl ActionSpace {
    pub const VALUES: [u64; 7] = [32, 48, 64, 96, 128, 256, 512];
    pub const COUNT: usize = Self::VALUES.len();

    pub fn value(index: usize) -> Result<u64, EnvError> {
        Self::VALUES
            .get(index)
            .copied()
            .ok_or(EnvError::InvalidAction(index))
    }

    /// Index of an MCW value in the action set, if it is one.
    pub fn index_of(value: u64) -> Option<usize> {
        Self::VALUES.iter().position(|&v| v == value)
    }
}

/// What node 0 sees after an interval: its own average age, the vehicles'
/// aggregate average age, its MCW that was in force, and the vehicle count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub node0_avg_aoi: f64,
    pub vehicles_aggregate_aoi: f64,
    pub node0_mcw: u64,
    pub vehicle_count: u32,
}

/// Fairness loss and utility of one interval. The reward is the utility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardRecord {
    pub fairness_loss: f64,
    pub utility: f64,
    pub reward: f64,
}

/// Age-fairness reward: the distance between node 0's share of the total
/// average age and the fair share `1/N_d`, subtracted from 1.
pub fn compute_reward(stats: &IntervalStats, n_d: u32) -> Result<RewardRecord, EnvError> {
    let total = stats.node0_avg_aoi + stats.vehicles_aggregate_aoi;
    if total <= 0.0 {
        return Err(EnvError::DegenerateInterval);
    }
    let fairness_loss = (stats.node0_avg_aoi / total - 1.0 / f64::from(n_d)).abs();
    let utility = 1.0 - fairness_loss;
    Ok(RewardRecord {
        fairness_loss,
        utility,
        reward: utility,
    })
}

/// Caps that map raw observations into `[0, 1]^4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationCaps {
    /// Largest representable interval-average age (slots per interval).
    pub aoi_cap: f64,
    pub max_vehicles: u32,
}

/// `phi(s)`: element-wise normalization of an observation, clamped to
/// `[0, 1]`. Monotone in every raw field and invertible below the caps.
pub fn normalize(obs: &Observation, caps: &NormalizationCaps) -> [f64; 4] {
    let max_v = f64::from(caps.max_vehicles);
    let vehicle_age_cap = caps.aoi_cap * max_v;
    let clamp = |x: f64| x.clamp(0.0, 1.0);
    [
        clamp(obs.node0_avg_aoi / caps.aoi_cap),
        if vehicle_age_cap > 0.0 {
            clamp(obs.vehicles_aggregate_aoi / vehicle_age_cap)
        } else {
            0.0
        },
        clamp(obs.node0_mcw as f64 / 512.0),
        if max_v > 0.0 {
            clamp(f64::from(obs.vehicle_count) / max_v)
        } else {
            0.0
        },
    ]
}

#[derive(Debug, Clone)]
struct Vehicle {
    node: Node,
    chain: McwChain,
}

/// World state of one rollout. Owns no RNG: every stochastic method takes
/// the caller's stream, so rollouts can be cloned and replayed under
/// common random numbers.
#[derive(Debug, Clone)]
pub struct Environment {
    sim: SimConfig,
    chain_states: Vec<u64>,
    transition_prob: f64,
    population: PopulationModel,
    vehicles: Vec<Vehicle>,
    node0: Node,
    clock: SimClock,
    next_vehicle_id: u32,
    current_obs: Option<Observation>,
    caps: NormalizationCaps,
}

impl Environment {
    /// Builds an un-reset environment.
    ///
    /// `chain_states` is the vehicles' MCW state space (strictly
    /// increasing) and `transition_prob` its per-interval move probability.
    pub fn new(
        sim: SimConfig,
        chain_states: Vec<u64>,
        transition_prob: f64,
        arrival_rate: f64,
        departure_rate: f64,
        max_vehicles: u32,
    ) -> Result<Self, EnvError> {
        sim.validate()?;
        // Chain validity is checked once here; per-vehicle chains clone it.
        McwChain::new(chain_states.clone(), transition_prob, 0, crate::dynamics::Direction::Up)?;
        let population = PopulationModel::new(arrival_rate, departure_rate, max_vehicles)?;
        let caps = NormalizationCaps {
            aoi_cap: sim.slots_per_interval() as f64,
            max_vehicles,
        };
        let node0 = Node {
            id: 0,
            mcw: ActionSpace::VALUES[0],
            backoff_counter: 0,
            backoff_stage: 0,
            aoi: 1,
            packet_timestamp: 0,
        };
        Ok(Self {
            sim,
            chain_states,
            transition_prob,
            population,
            vehicles: Vec::new(),
            node0,
            clock: SimClock::default(),
            next_vehicle_id: 1,
            current_obs: None,
            caps,
        })
    }

    pub fn caps(&self) -> NormalizationCaps {
        self.caps
    }

    pub fn sim_config(&self) -> &SimConfig {
        &self.sim
    }

    pub fn vehicle_count(&self) -> u32 {
        self.vehicles.len() as u32
    }

    /// Nodes currently in the network: node 0 plus one per vehicle.
    pub fn node_count(&self) -> u32 {
        self.vehicles.len() as u32 + 1
    }

    pub fn current_observation(&self) -> Option<Observation> {
        self.current_obs
    }

    /// Starts an episode: draws the initial population and vehicle chain
    /// phases, gives node 0 a uniformly random initial MCW from the action
    /// set, and runs interval 0 to produce the initial observation.
    pub fn reset(&mut self, rng: &mut impl Rng) -> Result<Observation, EnvError> {
        self.clock = SimClock::default();
        self.next_vehicle_id = 1;
        self.vehicles.clear();
        self.population.current_count = 0;
        let initial_mcw = ActionSpace::VALUES[rng.random_range(0..ActionSpace::COUNT)];
        self.node0 = Node::init(0, initial_mcw, self.clock.slot, rng)?;
        self.advance_population(rng)?;
        let stats = self.run_one_interval(rng)?;
        let obs = self.observation_from(&stats);
        self.current_obs = Some(obs);
        Ok(obs)
    }

    /// One MDP step. Applies the chosen MCW to node 0, advances the
    /// population and every vehicle's chain, runs the interval and returns
    /// `(previous observation, reward of the completed interval, new
    /// observation)`.
    pub fn step(
        &mut self,
        action_index: usize,
        rng: &mut impl Rng,
    ) -> Result<(Observation, RewardRecord, Observation), EnvError> {
        let prev = self.current_obs.ok_or(EnvError::NotReset)?;
        let mcw = ActionSpace::value(action_index)?;
        self.node0.set_mcw(mcw, rng)?;

        // Surviving vehicles transition their chains independently.
        for vehicle in &mut self.vehicles {
            let new_mcw = vehicle.chain.advance(rng);
            vehicle.node.set_mcw(new_mcw, rng)?;
        }
        self.advance_population(rng)?;

        let stats = self.run_one_interval(rng)?;
        let reward = compute_reward(&stats, self.node_count())?;
        let obs = self.observation_from(&stats);
        self.current_obs = Some(obs);
        Ok((prev, reward, obs))
    }

    /// Arrivals are admitted up to capacity, then departures leave; the
    /// vehicle list stays in lockstep with the population count.
    fn advance_population(&mut self, rng: &mut impl Rng) -> Result<(), EnvError> {
        let (arrivals, departures) = self.population.advance(rng);
        for _ in 0..arrivals {
            self.spawn_vehicle(rng)?;
        }
        for idx in select_departures(departures, self.vehicles.len(), rng) {
            self.vehicles.remove(idx);
        }
        debug_assert_eq!(self.population.current_count as usize, self.vehicles.len());
        Ok(())
    }

    fn spawn_vehicle(&mut self, rng: &mut impl Rng) -> Result<(), EnvError> {
        let chain =
            McwChain::with_random_phase(self.chain_states.clone(), self.transition_prob, rng)?;
        let node = Node::init(self.next_vehicle_id, chain.current_mcw(), self.clock.slot, rng)?;
        self.next_vehicle_id += 1;
        self.vehicles.push(Vehicle { node, chain });
        Ok(())
    }

    fn run_one_interval(&mut self, rng: &mut impl Rng) -> Result<IntervalStats, EnvError> {
        let mut nodes = Vec::with_capacity(self.vehicles.len() + 1);
        nodes.push(self.node0.clone());
        nodes.extend(self.vehicles.iter().map(|v| v.node.clone()));
        let stats = run_interval(&mut nodes, &mut self.clock, &self.sim, rng)?;
        let mut it = nodes.into_iter();
        self.node0 = it.next().expect("node 0 present");
        for (vehicle, node) in self.vehicles.iter_mut().zip(it) {
            vehicle.node = node;
        }
        Ok(stats)
    }

    fn observation_from(&self, stats: &IntervalStats) -> Observation {
        Observation {
            node0_avg_aoi: stats.node0_avg_aoi,
            vehicles_aggregate_aoi: stats.vehicles_aggregate_aoi,
            node0_mcw: self.node0.mcw,
            vehicle_count: self.vehicle_count(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::stream;
    use crate::sim::IntervalStats;

    fn stats(node0: f64, vehicles: f64) -> IntervalStats {
        IntervalStats {
            node0_avg_aoi: node0,
            vehicles_aggregate_aoi: vehicles,
            per_node_avg_aoi: vec![],
            success_count: 0,
            collision_count: 0,
            idle_count: 0,
            slots_elapsed: 0,
        }
    }

    fn test_env(states: Vec<u64>, ps: f64, lambda: f64, mu: f64, n_max: u32) -> Environment {
        Environment::new(SimConfig::default(), states, ps, lambda, mu, n_max).unwrap()
    }

    #[test]
    fn action_space_matches_spec_set() {
        assert_eq!(ActionSpace::VALUES, [32, 48, 64, 96, 128, 256, 512]);
        assert_eq!(ActionSpace::COUNT, 7);
        assert!(ActionSpace::value(7).is_err());
        assert_eq!(ActionSpace::index_of(96), Some(3));
        assert_eq!(ActionSpace::index_of(100), None);
    }

    #[test]
    fn lone_node_has_full_utility() {
        let r = compute_reward(&stats(50.0, 0.0), 1).unwrap();
        assert_eq!(r.fairness_loss, 0.0);
        assert_eq!(r.reward, 1.0);
    }

    #[test]
    fn symmetric_share_has_zero_loss() {
        let r = compute_reward(&stats(10.0, 30.0), 4).unwrap();
        assert!(r.fairness_loss.abs() < 1e-15);
        assert!((r.reward - 1.0).abs() < 1e-15);
    }

    #[test]
    fn skewed_share_pays_its_distance() {
        // |30/60 - 1/4| = 0.25 exactly.
        let r = compute_reward(&stats(30.0, 30.0), 4).unwrap();
        assert!((r.fairness_loss - 0.25).abs() < 1e-15);
        assert!((r.reward - 0.75).abs() < 1e-15);
    }

    #[test]
    fn degenerate_interval_is_an_error() {
        assert!(matches!(
            compute_reward(&stats(0.0, 0.0), 3),
            Err(EnvError::DegenerateInterval)
        ));
    }

    #[test]
    fn normalization_boundaries() {
        let caps = NormalizationCaps {
            aoi_cap: 20_000.0,
            max_vehicles: 6,
        };
        let zero_age = Observation {
            node0_avg_aoi: 0.0,
            vehicles_aggregate_aoi: 0.0,
            node0_mcw: 512,
            vehicle_count: 6,
        };
        assert_eq!(normalize(&zero_age, &caps), [0.0, 0.0, 1.0, 1.0]);
        let at_cap = Observation {
            node0_avg_aoi: 20_000.0,
            vehicles_aggregate_aoi: 240_000.0,
            node0_mcw: 32,
            vehicle_count: 0,
        };
        let phi = normalize(&at_cap, &caps);
        assert_eq!(phi[0], 1.0);
        assert_eq!(phi[1], 1.0); // 2x the cap, clamped
        let mid = Observation {
            node0_avg_aoi: 5_000.0,
            vehicles_aggregate_aoi: 30_000.0,
            node0_mcw: 128,
            vehicle_count: 3,
        };
        for v in normalize(&mid, &caps) {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn normalization_tolerates_zero_max_vehicles() {
        let caps = NormalizationCaps {
            aoi_cap: 20_000.0,
            max_vehicles: 0,
        };
        let obs = Observation {
            node0_avg_aoi: 10.0,
            vehicles_aggregate_aoi: 0.0,
            node0_mcw: 32,
            vehicle_count: 0,
        };
        let phi = normalize(&obs, &caps);
        assert!(phi.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn normalization_is_monotone_and_invertible_below_caps() {
        let caps = NormalizationCaps {
            aoi_cap: 20_000.0,
            max_vehicles: 6,
        };
        let base = Observation {
            node0_avg_aoi: 100.0,
            vehicles_aggregate_aoi: 500.0,
            node0_mcw: 64,
            vehicle_count: 2,
        };
        let phi = normalize(&base, &caps);
        let bigger = Observation {
            node0_avg_aoi: 200.0,
            vehicles_aggregate_aoi: 800.0,
            node0_mcw: 128,
            vehicle_count: 3,
        };
        let phi2 = normalize(&bigger, &caps);
        for (a, b) in phi.iter().zip(&phi2) {
            assert!(a < b);
        }
        // Invert on the unclamped range.
        assert!((phi[0] * caps.aoi_cap - base.node0_avg_aoi).abs() < 1e-9);
        assert!(
            (phi[1] * caps.aoi_cap * f64::from(caps.max_vehicles)
                - base.vehicles_aggregate_aoi)
                .abs()
                < 1e-9
        );
        assert_eq!((phi[2] * 512.0).round() as u64, base.node0_mcw);
        assert_eq!(
            (phi[3] * f64::from(caps.max_vehicles)).round() as u32,
            base.vehicle_count
        );
    }

    #[test]
    fn step_requires_reset() {
        let mut env = test_env(vec![32, 128], 1.0, 3.0, 3.0, 6);
        let mut rng = stream(1, "env/noreset");
        assert!(matches!(env.step(0, &mut rng), Err(EnvError::NotReset)));
    }

    #[test]
    fn out_of_range_action_is_rejected() {
        let mut env = test_env(vec![32, 128], 1.0, 3.0, 3.0, 6);
        let mut rng = stream(2, "env/badaction");
        env.reset(&mut rng).unwrap();
        assert!(matches!(env.step(9, &mut rng), Err(EnvError::InvalidAction(9))));
    }

    #[test]
    fn chosen_action_sets_node0_mcw() {
        let mut env = test_env(vec![32, 128], 1.0, 3.0, 3.0, 6);
        let mut rng = stream(3, "env/setmcw");
        env.reset(&mut rng).unwrap();
        let (_, _, obs) = env.step(0, &mut rng).unwrap();
        assert_eq!(obs.node0_mcw, 32);
        let (_, _, obs) = env.step(5, &mut rng).unwrap();
        assert_eq!(obs.node0_mcw, 256);
    }

    #[test]
    fn trajectories_are_deterministic_per_seed() {
        let run = || {
            let mut env = test_env(vec![32, 64, 128, 256, 512], 0.75, 3.0, 3.0, 6);
            let mut rng = stream(5, "env/det");
            let mut rewards = vec![];
            env.reset(&mut rng).unwrap();
            for a in [0usize, 3, 6, 2, 4, 1, 5, 0] {
                let (_, r, _) = env.step(a, &mut rng).unwrap();
                rewards.push(r.reward);
            }
            rewards
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empty_network_rewards_exactly_one() {
        let mut env = test_env(vec![32, 128], 1.0, 0.0, 0.0, 0);
        let mut rng = stream(6, "env/alone");
        env.reset(&mut rng).unwrap();
        for a in 0..ActionSpace::COUNT {
            let (_, r, obs) = env.step(a, &mut rng).unwrap();
            assert_eq!(r.reward, 1.0);
            assert_eq!(obs.vehicle_count, 0);
        }
    }

    #[test]
    fn rewards_stay_in_unit_interval() {
        let mut env = test_env(vec![32, 64, 128, 256, 512], 0.75, 3.0, 3.0, 6);
        let mut rng = stream(7, "env/bounded");
        env.reset(&mut rng).unwrap();
        for i in 0..40 {
            let (_, r, obs) = env.step(i % ActionSpace::COUNT, &mut rng).unwrap();
            assert!((0.0..=1.0).contains(&r.reward), "reward {}", r.reward);
            assert!(obs.vehicle_count <= 6);
            assert!(obs.node0_avg_aoi.is_finite() && obs.node0_avg_aoi >= 0.0);
        }
    }

    #[test]
    fn symmetric_population_keeps_mean_loss_small() {
        // All nodes on the same MCW: the expected fairness loss shrinks as
        // the interval grows; at one-second intervals the mean over 100
        // seeded intervals stays under 0.1 for 2, 4 and 6 contenders.
        for &n_d in &[2u32, 4, 6] {
            let mut total = 0.0;
            let mut count = 0u32;
            for seed in 0..4 {
                let mut env = test_env(vec![64], 0.0, 9.0, 0.0, n_d - 1);
                let mut rng = stream(seed, "env/symmetric");
                env.reset(&mut rng).unwrap();
                let action = ActionSpace::index_of(64).unwrap();
                for _ in 0..25 {
                    let (_, r, _) = env.step(action, &mut rng).unwrap();
                    total += r.fairness_loss;
                    count += 1;
                }
            }
            let mean = total / f64::from(count);
            assert!(mean < 0.1, "N_d={n_d}: mean loss {mean:.4}");
        }
    }
}
