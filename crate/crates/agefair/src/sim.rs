//! Slot-level simulation of saturated IEEE 802.11 DCF contention with
//! per-micro-slot age-of-information accounting.
//!
//! Time is discretized into micro-slots of `slot_duration_us`. In every
//! micro-slot each node whose backoff counter reached zero transmits:
//! exactly one transmitter is a success, two or more are a collision, none
//! is an idle slot in which every counter decrements by one. Busy periods
//! (success or collision) occupy a fixed number of micro-slots during which
//! the counters of non-transmitting nodes freeze.
//!
//! Ages regenerate on reception: a delivered packet is resampled
//! immediately, so the owner's age is 1 one micro-slot after the base
//! station finishes receiving (the final micro-slot of the busy period).
//! Everyone else ages by one per micro-slot.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
    #[error("minimum contention window must be at least 2, got {0}")]
    WindowTooSmall(u64),
    #[error("contention step requires at least one node")]
    NoParticipants,
}

/// Timing and backoff parameters of one simulation.
///
/// Durations are in microseconds. Busy periods are rounded up to whole
/// micro-slots, so the age sums of an observation interval are defined
/// over a uniform micro-slot grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub slot_duration_us: f64,
    pub success_duration_us: f64,
    pub collision_duration_us: f64,
    pub interval_duration_us: f64,
    pub max_backoff_stage: u8,
    pub rng_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            slot_duration_us: 50.0,
            success_duration_us: 179.64,
            collision_duration_us: 174.26,
            interval_duration_us: 1_000_000.0,
            max_backoff_stage: 3,
            rng_seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.slot_duration_us > 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "slot_duration_us must be positive, got {}",
                self.slot_duration_us
            )));
        }
        let ratio = self.interval_duration_us / self.slot_duration_us;
        if ratio < 1.0 || (ratio - ratio.round()).abs() > 1e-6 {
            return Err(SimError::InvalidConfig(format!(
                "interval_duration_us ({}) must be an integer multiple of slot_duration_us ({})",
                self.interval_duration_us, self.slot_duration_us
            )));
        }
        if self.success_duration_us < self.slot_duration_us {
            return Err(SimError::InvalidConfig(
                "success_duration_us must be at least one slot".into(),
            ));
        }
        if self.collision_duration_us < self.slot_duration_us {
            return Err(SimError::InvalidConfig(
                "collision_duration_us must be at least one slot".into(),
            ));
        }
        Ok(())
    }

    /// Micro-slots per observation interval (T / T_slot).
    pub fn slots_per_interval(&self) -> u64 {
        (self.interval_duration_us / self.slot_duration_us).round() as u64
    }

    /// Micro-slots occupied by a successful transmission (ceil(T_s / T_slot)).
    pub fn success_slots(&self) -> u64 {
        (self.success_duration_us / self.slot_duration_us).ceil() as u64
    }

    /// Micro-slots occupied by a collision (ceil(T_c / T_slot)).
    pub fn collision_slots(&self) -> u64 {
        (self.collision_duration_us / self.slot_duration_us).ceil() as u64
    }
}

/// Micro-slot clock. One tick per `slot_duration_us`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimClock {
    pub slot: u64,
}

/// One contending transmitter: the intelligent node (id 0) or a vehicle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: u32,
    /// Minimum contention window currently in force.
    pub mcw: u64,
    /// Remaining idle slots before this node transmits.
    pub backoff_counter: u64,
    /// Consecutive collisions of the current packet, capped at the config's
    /// maximum stage. The live window is `mcw << backoff_stage`.
    pub backoff_stage: u8,
    /// Age of this node's data at the base station, in micro-slots.
    pub aoi: u64,
    /// Micro-slot at which the current packet was generated.
    pub packet_timestamp: u64,
}

impl Node {
    /// Creates a node with a fresh packet and a backoff counter drawn
    /// uniformly from `[0, mcw - 1]`.
    pub fn init(id: u32, mcw: u64, now_slot: u64, rng: &mut impl Rng) -> Result<Self, SimError> {
        if mcw < 2 {
            return Err(SimError::WindowTooSmall(mcw));
        }
        Ok(Self {
            id,
            mcw,
            backoff_counter: rng.random_range(0..mcw),
            backoff_stage: 0,
            aoi: 1,
            packet_timestamp: now_slot,
        })
    }

    /// Current contention window `mcw * 2^stage`.
    pub fn window(&self) -> u64 {
        self.mcw << self.backoff_stage
    }

    /// Installs a new minimum contention window. The backoff stage is kept
    /// (it belongs to the in-flight packet) and the counter is redrawn from
    /// the new window so the counter bound invariant holds.
    pub fn set_mcw(&mut self, mcw: u64, rng: &mut impl Rng) -> Result<(), SimError> {
        if mcw < 2 {
            return Err(SimError::WindowTooSmall(mcw));
        }
        if mcw != self.mcw {
            self.mcw = mcw;
            self.backoff_counter = rng.random_range(0..self.window());
        }
        Ok(())
    }
}

/// Outcome of one contention step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlotOutcome {
    /// No transmitter; one micro-slot elapsed, all counters decremented.
    Idle,
    /// Exactly one transmitter; `success_slots()` micro-slots elapsed.
    Success { winner: u32 },
    /// Two or more transmitters; `collision_slots()` micro-slots elapsed.
    Collision { transmitters: Vec<u32> },
}

impl SlotOutcome {
    /// Micro-slots consumed by this outcome under `config`.
    pub fn elapsed_slots(&self, config: &SimConfig) -> u64 {
        match self {
            SlotOutcome::Idle => 1,
            SlotOutcome::Success { .. } => config.success_slots(),
            SlotOutcome::Collision { .. } => config.collision_slots(),
        }
    }
}

/// Aggregated age quantities of one observation interval.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalStats {
    /// Time-average age of node 0 over the interval, in slots.
    pub node0_avg_aoi: f64,
    /// Sum of the vehicles' time-average ages (0 when no vehicles).
    pub vehicles_aggregate_aoi: f64,
    /// Time-average age of each node, in the order of the node list.
    pub per_node_avg_aoi: Vec<f64>,
    pub success_count: u64,
    pub collision_count: u64,
    /// Idle micro-slots.
    pub idle_count: u64,
    /// Micro-slots actually consumed. At least `slots_per_interval()`; a
    /// busy period crossing the interval boundary runs to completion and
    /// its slots are attributed to this interval.
    pub slots_elapsed: u64,
}

fn redraw_after_success(node: &mut Node, rng: &mut impl Rng) {
    node.backoff_stage = 0;
    node.backoff_counter = rng.random_range(0..node.mcw);
}

fn redraw_after_collision(node: &mut Node, max_stage: u8, rng: &mut impl Rng) {
    node.backoff_stage = (node.backoff_stage + 1).min(max_stage);
    node.backoff_counter = rng.random_range(0..node.window());
}

/// Advances the contention state machine by one step.
///
/// Idle: every counter decrements, the clock moves one micro-slot. Success
/// or collision: the clock moves by the busy duration, the transmitters
/// redraw their counters (stage reset on success, escalated on collision)
/// and everyone else's counter freezes. Ages are not touched here; pair
/// with [`update_aoi`].
pub fn step_contention(
    nodes: &mut [Node],
    clock: &mut SimClock,
    config: &SimConfig,
    rng: &mut impl Rng,
) -> Result<SlotOutcome, SimError> {
    if nodes.is_empty() {
        return Err(SimError::NoParticipants);
    }
    let transmitters: Vec<usize> = nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.backoff_counter == 0)
        .map(|(i, _)| i)
        .collect();
    match transmitters.len() {
        0 => {
            for node in nodes.iter_mut() {
                node.backoff_counter -= 1;
            }
            clock.slot += 1;
            Ok(SlotOutcome::Idle)
        }
        1 => {
            let idx = transmitters[0];
            redraw_after_success(&mut nodes[idx], rng);
            clock.slot += config.success_slots();
            Ok(SlotOutcome::Success {
                winner: nodes[idx].id,
            })
        }
        _ => {
            let ids = transmitters.iter().map(|&i| nodes[i].id).collect();
            for &idx in &transmitters {
                redraw_after_collision(&mut nodes[idx], config.max_backoff_stage, rng);
            }
            clock.slot += config.collision_slots();
            Ok(SlotOutcome::Collision { transmitters: ids })
        }
    }
}

/// Applies the age recursion for one completed step.
///
/// The success winner's packet was received during the step, so its age is
/// 1 at the step's final slot boundary and its next packet's timestamp is
/// the reception slot. Every other node ages by the elapsed slots.
pub fn update_aoi(nodes: &mut [Node], outcome: &SlotOutcome, elapsed_slots: u64, now_slot: u64) {
    let winner = match outcome {
        SlotOutcome::Success { winner } => Some(*winner),
        _ => None,
    };
    for node in nodes.iter_mut() {
        if winner == Some(node.id) {
            node.aoi = 1;
            node.packet_timestamp = now_slot - 1;
        } else {
            node.aoi += elapsed_slots;
        }
    }
}

/// Per-slot age contributions of one step, as integer sums.
///
/// A node whose packet was received contributes ages
/// `a+1, ..., a+elapsed-1, 1` over the step's slots; everyone else
/// contributes `a+1, ..., a+elapsed`.
fn age_sum_over_step(pre_aoi: u64, elapsed: u64, received: bool) -> u64 {
    if received {
        (elapsed - 1) * pre_aoi + (elapsed - 1) * elapsed / 2 + 1
    } else {
        elapsed * pre_aoi + elapsed * (elapsed + 1) / 2
    }
}

/// Runs one observation interval (`slots_per_interval()` micro-slots) of
/// contention and returns the interval-average age quantities.
///
/// Node state (counters, stages, ages) carries over; the MCW of every node
/// is constant within the interval. Idle stretches are batch-advanced to
/// the next transmission event, which draws random numbers in exactly the
/// same order as stepping slot by slot.
pub fn run_interval(
    nodes: &mut [Node],
    clock: &mut SimClock,
    config: &SimConfig,
    rng: &mut impl Rng,
) -> Result<IntervalStats, SimError> {
    if nodes.is_empty() {
        return Err(SimError::NoParticipants);
    }
    let target = config.slots_per_interval();
    let success_slots = config.success_slots();
    let collision_slots = config.collision_slots();

    let mut age_sums = vec![0u64; nodes.len()];
    let mut consumed = 0u64;
    let mut success_count = 0u64;
    let mut collision_count = 0u64;
    let mut idle_count = 0u64;

    while consumed < target {
        let min_counter = nodes.iter().map(|n| n.backoff_counter).min().unwrap();
        if min_counter > 0 {
            // Batch of idle slots, cut at the interval boundary.
            let k = min_counter.min(target - consumed);
            for (i, node) in nodes.iter_mut().enumerate() {
                age_sums[i] += k * node.aoi + k * (k + 1) / 2;
                node.aoi += k;
                node.backoff_counter -= k;
            }
            consumed += k;
            clock.slot += k;
            idle_count += k;
            continue;
        }
        let transmitters: Vec<usize> = nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.backoff_counter == 0)
            .map(|(i, _)| i)
            .collect();
        let (elapsed, winner) = if transmitters.len() == 1 {
            let idx = transmitters[0];
            redraw_after_success(&mut nodes[idx], rng);
            success_count += 1;
            (success_slots, Some(idx))
        } else {
            for &idx in &transmitters {
                redraw_after_collision(&mut nodes[idx], config.max_backoff_stage, rng);
            }
            collision_count += 1;
            (collision_slots, None)
        };
        for (i, node) in nodes.iter_mut().enumerate() {
            let received = winner == Some(i);
            age_sums[i] += age_sum_over_step(node.aoi, elapsed, received);
            if received {
                node.aoi = 1;
                node.packet_timestamp = clock.slot + elapsed - 1;
            } else {
                node.aoi += elapsed;
            }
        }
        consumed += elapsed;
        clock.slot += elapsed;
    }

    let per_node_avg_aoi: Vec<f64> = age_sums
        .iter()
        .map(|&s| s as f64 / consumed as f64)
        .collect();
    let node0_avg_aoi = nodes
        .iter()
        .position(|n| n.id == 0)
        .map_or(0.0, |i| per_node_avg_aoi[i]);
    let vehicles_aggregate_aoi = nodes
        .iter()
        .zip(&per_node_avg_aoi)
        .filter(|(n, _)| n.id != 0)
        .map(|(_, &avg)| avg)
        .sum();

    Ok(IntervalStats {
        node0_avg_aoi,
        vehicles_aggregate_aoi,
        per_node_avg_aoi,
        success_count,
        collision_count,
        idle_count,
        slots_elapsed: consumed,
    })
}
