//! Experience replay: the FIFO transition store and the sliding-window
//! n-step accumulator that feeds it.

use std::collections::VecDeque;

use rand::Rng;

/// One stored experience: the normalized state where `action` was taken,
/// the discounted reward accumulated over `steps` intervals, and the
/// normalized state `steps` intervals later. `terminal` marks transitions
/// truncated by an episode boundary, which are not bootstrapped.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: [f64; 4],
    pub action: usize,
    pub n_step_reward: f64,
    pub next_state: [f64; 4],
    pub steps: usize,
    pub terminal: bool,
}

/// Ring buffer of transitions with FIFO eviction and uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    mini_batch: usize,
    storage: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, mini_batch: usize) -> Self {
        Self {
            capacity,
            mini_batch,
            storage: VecDeque::with_capacity(capacity.min(1 << 20)),
        }
    }

    pub fn push(&mut self, transition: Transition) {
        if self.storage.len() == self.capacity {
            self.storage.pop_front();
        }
        self.storage.push_back(transition);
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn mini_batch(&self) -> usize {
        self.mini_batch
    }

    /// Sampling is gated on holding at least one mini-batch of experience.
    pub fn is_ready(&self) -> bool {
        self.storage.len() >= self.mini_batch
    }

    /// Uniform sample (with replacement) of one mini-batch.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<Transition> {
        (0..self.mini_batch)
            .map(|_| self.storage[rng.random_range(0..self.storage.len())].clone())
            .collect()
    }
}

/// Sliding window that turns per-interval rewards into n-step transitions
/// with `r = sum_j gamma_r^j r_{n+j}`.
#[derive(Debug, Clone)]
pub struct NStepAccumulator {
    n_step: usize,
    gamma_r: f64,
    pending: VecDeque<([f64; 4], usize, f64)>,
}

impl NStepAccumulator {
    pub fn new(n_step: usize, gamma_r: f64) -> Self {
        assert!(n_step >= 1, "n_step must be at least 1");
        Self {
            n_step,
            gamma_r,
            pending: VecDeque::with_capacity(n_step),
        }
    }

    fn windowed_reward(&self) -> f64 {
        self.pending
            .iter()
            .enumerate()
            .map(|(j, (_, _, r))| self.gamma_r.powi(j as i32) * r)
            .sum()
    }

    /// Records one step; once the window spans `n_step` rewards, emits the
    /// transition anchored at the window's first step, with `next_state`
    /// the state just observed.
    pub fn push(
        &mut self,
        state: [f64; 4],
        action: usize,
        reward: f64,
        next_state: [f64; 4],
    ) -> Option<Transition> {
        self.pending.push_back((state, action, reward));
        if self.pending.len() < self.n_step {
            return None;
        }
        let n_step_reward = self.windowed_reward();
        let (first_state, first_action, _) = self.pending.pop_front().expect("window non-empty");
        Some(Transition {
            state: first_state,
            action: first_action,
            n_step_reward,
            next_state,
            steps: self.n_step,
            terminal: false,
        })
    }

    /// Drains the window at an episode boundary: each remaining entry
    /// becomes a truncated transition (fewer accumulated steps, marked
    /// terminal) whose next state is the episode's final state.
    pub fn flush(&mut self, final_state: [f64; 4]) -> Vec<Transition> {
        let mut out = Vec::with_capacity(self.pending.len());
        while !self.pending.is_empty() {
            let n_step_reward = self.windowed_reward();
            let steps = self.pending.len();
            let (state, action, _) = self.pending.pop_front().expect("non-empty");
            out.push(Transition {
                state,
                action,
                n_step_reward,
                next_state: final_state,
                steps,
                terminal: true,
            });
        }
        out
    }
}
