//! Interval-boundary dynamics: the vehicle population process and the
//! per-vehicle minimum-contention-window Markov chains.
//!
//! Both evolve only at observation-interval boundaries; within an interval
//! the population and every MCW are frozen.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid dynamics config: {0}")]
    InvalidConfig(String),
}

/// Poisson arrival/departure process for the vehicle count, clamped to
/// `[0, max_vehicles]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationModel {
    pub arrival_rate: f64,
    pub departure_rate: f64,
    pub max_vehicles: u32,
    pub current_count: u32,
}

impl PopulationModel {
    pub fn new(arrival_rate: f64, departure_rate: f64, max_vehicles: u32) -> Result<Self, DynamicsError> {
        if arrival_rate < 0.0 || departure_rate < 0.0 {
            return Err(DynamicsError::InvalidConfig(
                "arrival and departure rates must be non-negative".into(),
            ));
        }
        Ok(Self {
            arrival_rate,
            departure_rate,
            max_vehicles,
            current_count: 0,
        })
    }

    /// Draws one interval's population change.
    ///
    /// Arrivals are admitted first (capped at `max_vehicles`), then
    /// departures remove vehicles down to zero at most. Returns the
    /// *applied* `(arrivals, departures)` counts; the caller picks which
    /// concrete vehicles leave via [`select_departures`].
    pub fn advance(&mut self, rng: &mut impl Rng) -> (u32, u32) {
        let raw_arrivals = poisson_draw(self.arrival_rate, rng);
        let raw_departures = poisson_draw(self.departure_rate, rng);
        let admitted = raw_arrivals.min(self.max_vehicles - self.current_count.min(self.max_vehicles));
        self.current_count += admitted;
        let departed = raw_departures.min(self.current_count);
        self.current_count -= departed;
        (admitted, departed)
    }
}

fn poisson_draw(rate: f64, rng: &mut impl Rng) -> u32 {
    if rate <= 0.0 {
        return 0;
    }
    let draw = Poisson::new(rate).expect("rate validated positive").sample(rng);
    // The sampler returns f64 counts; clamp defensively before casting.
    draw.min(u32::MAX as f64) as u32
}

/// Picks `count` distinct indices uniformly from `0..population`, for
/// removing departing vehicles. Returned sorted descending so the caller
/// can `swap_remove`/`remove` without invalidating later indices.
pub fn select_departures(count: u32, population: usize, rng: &mut impl Rng) -> Vec<usize> {
    let count = (count as usize).min(population);
    let mut pool: Vec<usize> = (0..population).collect();
    let mut chosen = Vec::with_capacity(count);
    for _ in 0..count {
        let pick = rng.random_range(0..pool.len());
        chosen.push(pool.swap_remove(pick));
    }
    chosen.sort_unstable_by(|a, b| b.cmp(a));
    chosen
}

/// Direction of the ping-pong MCW walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

/// Per-vehicle MCW state machine: with probability `transition_prob` the
/// chain moves one step through its ordered state space, bouncing at the
/// ends; otherwise it stays put.
#[derive(Debug, Clone, PartialEq)]
pub struct McwChain {
    state_space: Vec<u64>,
    pub transition_prob: f64,
    pub current_index: usize,
    pub direction: Direction,
}

impl McwChain {
    pub fn new(
        state_space: Vec<u64>,
        transition_prob: f64,
        start_index: usize,
        direction: Direction,
    ) -> Result<Self, DynamicsError> {
        if state_space.is_empty() {
            return Err(DynamicsError::InvalidConfig("empty MCW state space".into()));
        }
        if !state_space.windows(2).all(|w| w[0] < w[1]) {
            return Err(DynamicsError::InvalidConfig(
                "MCW state space must be strictly increasing".into(),
            ));
        }
        if start_index >= state_space.len() {
            return Err(DynamicsError::InvalidConfig(format!(
                "start index {start_index} out of bounds"
            )));
        }
        if !(0.0..=1.0).contains(&transition_prob) {
            return Err(DynamicsError::InvalidConfig(format!(
                "transition probability {transition_prob} outside [0, 1]"
            )));
        }
        Ok(Self {
            state_space,
            transition_prob,
            current_index: start_index,
            direction,
        })
    }

    /// A chain started at a uniformly random phase: random state, random
    /// direction (forced inward at the ends).
    pub fn with_random_phase(
        state_space: Vec<u64>,
        transition_prob: f64,
        rng: &mut impl Rng,
    ) -> Result<Self, DynamicsError> {
        let index = rng.random_range(0..state_space.len().max(1));
        let direction = if rng.random::<bool>() { Direction::Up } else { Direction::Down };
        let mut chain = Self::new(state_space, transition_prob, index, direction)?;
        chain.clamp_direction();
        Ok(chain)
    }

    fn clamp_direction(&mut self) {
        if self.current_index == 0 {
            self.direction = Direction::Up;
        } else if self.current_index == self.state_space.len() - 1 {
            self.direction = Direction::Down;
        }
    }

    pub fn current_mcw(&self) -> u64 {
        self.state_space[self.current_index]
    }

    pub fn state_space(&self) -> &[u64] {
        &self.state_space
    }

    /// One interval-boundary transition; returns the MCW now in force.
    pub fn advance(&mut self, rng: &mut impl Rng) -> u64 {
        let moves = rng.random::<f64>() < self.transition_prob;
        if moves && self.state_space.len() > 1 {
            match self.direction {
                Direction::Up => {
                    if self.current_index + 1 == self.state_space.len() {
                        self.direction = Direction::Down;
                        self.current_index -= 1;
                    } else {
                        self.current_index += 1;
                    }
                }
                Direction::Down => {
                    if self.current_index == 0 {
                        self.direction = Direction::Up;
                        self.current_index += 1;
                    } else {
                        self.current_index -= 1;
                    }
                }
            }
            self.clamp_direction();
        }
        self.current_mcw()
    }
}
