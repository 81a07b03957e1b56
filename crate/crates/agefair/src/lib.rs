//! Age-fairness channel access at desk scale.
//!
//! A deterministic slot-level simulator of IEEE 802.11 DCF contention with
//! per-node age-of-information tracking for a dynamic vehicle population,
//! wrapped as an RL environment, plus an extended-DQN agent (double,
//! dueling, multi-step, distributional, noisy) and baseline policies.
//!
//! The crate is a library first: the `examples/` directory holds one
//! runnable example per capability, and the single `agefair` binary exposes
//! the experiment harness (`train`, `test`, `sweep`, `compare`,
//! `baseline-fit`, `validate`).

pub mod dynamics;
pub mod env;
pub mod neural;
pub mod seeds;
pub mod sim;
pub mod validate;
