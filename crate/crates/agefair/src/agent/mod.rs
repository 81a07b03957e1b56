//! The extended-DQN agent: noisy-net action selection, double-Q
//! distributional targets with n-step rewards, the training loop, and
//! greedy evaluation.

mod replay;

pub use replay::{NStepAccumulator, ReplayBuffer, Transition};

use rand::Rng;
use thiserror::Error;

use crate::env::{normalize, EnvError, Environment, NormalizationCaps};
use crate::neural::{
    argmax, CategoricalQNetwork, NetworkConfig, NeuralError, NoiseMode, TrainSample,
};
use crate::seeds::{stream, Stream};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Neural(NeuralError),
    #[error("training diverged at episode {episode}, step {step}; last finite parameters preserved")]
    Diverged {
        episode: usize,
        step: usize,
        checkpoint: Box<CategoricalQNetwork>,
    },
}

/// Target-network refresh policy. The only supported schedule copies the
/// prediction parameters at every episode boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetSync {
    #[default]
    PerEpisode,
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    /// Bootstrap discount (Bellman-update gamma).
    pub gamma: f64,
    /// Per-step discount of the n-step reward sum.
    pub gamma_r: f64,
    pub lr: f64,
    pub n_step: usize,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub buffer_capacity: usize,
    pub mini_batch: usize,
    pub target_sync: TargetSync,
    pub network: NetworkConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gamma_r: 0.99,
            lr: 1e-4,
            n_step: 3,
            episodes: 200,
            steps_per_episode: 200,
            buffer_capacity: 10_000,
            mini_batch: 32,
            target_sync: TargetSync::PerEpisode,
            network: NetworkConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(AgentError::InvalidConfig(format!("gamma {} outside (0,1)", self.gamma)));
        }
        if !(self.gamma_r > 0.0 && self.gamma_r < 1.0) {
            return Err(AgentError::InvalidConfig(format!(
                "gamma_r {} outside (0,1)",
                self.gamma_r
            )));
        }
        if !(self.lr > 0.0) {
            return Err(AgentError::InvalidConfig("learning rate must be positive".into()));
        }
        if !(1..=5).contains(&self.n_step) {
            return Err(AgentError::InvalidConfig(format!(
                "n_step {} outside [1, 5]",
                self.n_step
            )));
        }
        if self.episodes == 0 || self.steps_per_episode == 0 {
            return Err(AgentError::InvalidConfig("episodes and steps must be positive".into()));
        }
        if self.buffer_capacity == 0 || self.mini_batch == 0 {
            return Err(AgentError::InvalidConfig("buffer and batch must be positive".into()));
        }
        Ok(())
    }
}

/// Noisy-net action selection: resamples exploration noise, runs a sampled
/// forward pass and picks the action with the largest expected value
/// (lowest index on ties). No epsilon schedule; the noise is the
/// exploration.
pub fn select_action(
    net: &mut CategoricalQNetwork,
    state: &[f64; 4],
    rng: &mut impl Rng,
) -> Result<usize, AgentError> {
    net.resample_noise(rng);
    let q = net.action_values(state, NoiseMode::Sampled).map_err(AgentError::Neural)?;
    Ok(argmax(&q))
}

/// Double-Q distributional target of one transition: the prediction
/// network picks the bootstrap action at the next state, the target
/// network supplies that action's value distribution, and the result is
/// the categorical projection of `r + gamma_r^steps * z` onto the support.
/// Truncated (terminal) transitions project the bare n-step reward.
pub fn compute_target(
    transition: &Transition,
    predict: &CategoricalQNetwork,
    target_net: &CategoricalQNetwork,
    gamma_r: f64,
    mode: NoiseMode,
) -> Result<Vec<f64>, AgentError> {
    let support = target_net.support();
    if transition.terminal {
        return Ok(support.project_point(transition.n_step_reward));
    }
    let q_next = predict
        .action_values(&transition.next_state, mode)
        .map_err(AgentError::Neural)?;
    let best = argmax(&q_next);
    let next_probs = target_net
        .forward(&transition.next_state, mode)
        .map_err(AgentError::Neural)?;
    let n_atoms = target_net.n_atoms();
    let row = &next_probs[best * n_atoms..(best + 1) * n_atoms];
    let gamma_eff = gamma_r.powi(transition.steps as i32);
    Ok(support.project(transition.n_step_reward, gamma_eff, row))
}

/// Scalar double-Q TD target evaluated on Q expectations (test oracle for
/// the distributional path): `r + gamma_r^steps * Q_target(s', argmax_a
/// Q_predict(s', a))`, without support clamping.
pub fn scalar_td_target(
    transition: &Transition,
    predict: &CategoricalQNetwork,
    target_net: &CategoricalQNetwork,
    gamma_r: f64,
    mode: NoiseMode,
) -> Result<f64, AgentError> {
    if transition.terminal {
        return Ok(transition.n_step_reward);
    }
    let q_next = predict
        .action_values(&transition.next_state, mode)
        .map_err(AgentError::Neural)?;
    let best = argmax(&q_next);
    let q_target = target_net
        .action_values(&transition.next_state, mode)
        .map_err(AgentError::Neural)?;
    Ok(transition.n_step_reward + gamma_r.powi(transition.steps as i32) * q_target[best])
}

/// Classical single-network TD target, `r + gamma * max_a Q(s', a)`: the
/// pre-double-Q update kept as a test oracle. With the target network equal
/// to the prediction network the double-Q oracle reduces to this.
pub fn classical_td_target(
    transition: &Transition,
    net: &CategoricalQNetwork,
    gamma: f64,
    mode: NoiseMode,
) -> Result<f64, AgentError> {
    if transition.terminal {
        return Ok(transition.n_step_reward);
    }
    let q_next = net
        .action_values(&transition.next_state, mode)
        .map_err(AgentError::Neural)?;
    let best = argmax(&q_next);
    Ok(transition.n_step_reward + gamma.powi(transition.steps as i32) * q_next[best])
}

/// One row of the training/evaluation metrics stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub episode: usize,
    pub step: usize,
    pub reward: f64,
    pub utility: f64,
    pub node0_mcw: u64,
    pub n_vehicles: u32,
    pub loss: Option<f64>,
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub net: CategoricalQNetwork,
    pub steps: Vec<StepMetrics>,
    pub episode_mean_utility: Vec<f64>,
    pub gradient_steps: u64,
}

/// Training state machine, one episode at a time. [`train`] drives it to
/// completion; tests can step it and inspect the networks between
/// episodes.
pub struct Trainer {
    cfg: AgentConfig,
    predict: CategoricalQNetwork,
    target: CategoricalQNetwork,
    buffer: ReplayBuffer,
    env_rng: Stream,
    noise_rng: Stream,
    buffer_rng: Stream,
    steps: Vec<StepMetrics>,
    episode_mean_utility: Vec<f64>,
    gradient_steps: u64,
    episode: usize,
}

impl Trainer {
    pub fn new(cfg: AgentConfig, seed: u64) -> Result<Self, AgentError> {
        cfg.validate()?;
        let mut init_rng = stream(seed, "train/init");
        let predict =
            CategoricalQNetwork::new(&cfg.network, &mut init_rng).map_err(AgentError::Neural)?;
        let target = predict.clone();
        let buffer = ReplayBuffer::new(cfg.buffer_capacity, cfg.mini_batch);
        Ok(Self {
            buffer,
            target,
            predict,
            env_rng: stream(seed, "train/env"),
            noise_rng: stream(seed, "train/noise"),
            buffer_rng: stream(seed, "train/buffer"),
            steps: Vec::new(),
            episode_mean_utility: Vec::new(),
            gradient_steps: 0,
            episode: 0,
            cfg,
        })
    }

    pub fn predict_net(&self) -> &CategoricalQNetwork {
        &self.predict
    }

    pub fn target_net(&self) -> &CategoricalQNetwork {
        &self.target
    }

    pub fn gradient_steps(&self) -> u64 {
        self.gradient_steps
    }

    /// Runs one episode: reset, act/step/store for `steps_per_episode`
    /// intervals with one gradient step per interval once the buffer holds
    /// a mini-batch, then the per-episode target sync.
    pub fn run_episode(&mut self, env: &mut Environment) -> Result<f64, AgentError> {
        self.episode += 1;
        let episode = self.episode;
        let caps = env.caps();
        let obs = env.reset(&mut self.env_rng)?;
        let mut phi = normalize(&obs, &caps);
        let mut accumulator = NStepAccumulator::new(self.cfg.n_step, self.cfg.gamma_r);
        let mut utility_sum = 0.0;

        for step in 1..=self.cfg.steps_per_episode {
            let action = select_action(&mut self.predict, &phi, &mut self.noise_rng)?;
            let (_, reward, next_obs) = env.step(action, &mut self.env_rng)?;
            let phi_next = normalize(&next_obs, &caps);
            if let Some(t) = accumulator.push(phi, action, reward.reward, phi_next) {
                self.buffer.push(t);
            }
            let loss = if self.buffer.is_ready() {
                Some(self.gradient_step(episode, step)?)
            } else {
                None
            };
            utility_sum += reward.utility;
            self.steps.push(StepMetrics {
                episode,
                step,
                reward: reward.reward,
                utility: reward.utility,
                node0_mcw: next_obs.node0_mcw,
                n_vehicles: next_obs.vehicle_count,
                loss,
            });
            phi = phi_next;
        }
        for t in accumulator.flush(phi) {
            self.buffer.push(t);
        }
        match self.cfg.target_sync {
            TargetSync::PerEpisode => self.target = self.predict.clone(),
        }
        let mean = utility_sum / self.cfg.steps_per_episode as f64;
        self.episode_mean_utility.push(mean);
        Ok(mean)
    }

    fn gradient_step(&mut self, episode: usize, step: usize) -> Result<f64, AgentError> {
        let batch = self.buffer.sample(&mut self.buffer_rng);
        self.predict.resample_noise(&mut self.noise_rng);
        self.target.resample_noise(&mut self.noise_rng);
        let mut samples = Vec::with_capacity(batch.len());
        for transition in &batch {
            let target = compute_target(
                transition,
                &self.predict,
                &self.target,
                self.cfg.gamma_r,
                NoiseMode::Sampled,
            )?;
            samples.push(TrainSample {
                input: transition.state,
                action: transition.action,
                target,
            });
        }
        self.gradient_steps += 1;
        match self.predict.train_step(&samples, self.cfg.lr) {
            Ok(loss) => Ok(loss),
            Err(NeuralError::TrainingDiverged) => Err(AgentError::Diverged {
                episode,
                step,
                checkpoint: Box::new(self.predict.clone()),
            }),
            Err(e) => Err(AgentError::Neural(e)),
        }
    }

    pub fn into_output(self) -> TrainOutput {
        TrainOutput {
            net: self.predict,
            steps: self.steps,
            episode_mean_utility: self.episode_mean_utility,
            gradient_steps: self.gradient_steps,
        }
    }
}

/// Full training run over `cfg.episodes` episodes. All randomness is
/// derived from `seed` via the named-stream rule, so identical inputs give
/// identical outputs.
pub fn train(env: &mut Environment, cfg: &AgentConfig, seed: u64) -> Result<TrainOutput, AgentError> {
    let mut trainer = Trainer::new(cfg.clone(), seed)?;
    for _ in 0..cfg.episodes {
        trainer.run_episode(env)?;
    }
    Ok(trainer.into_output())
}

/// Greedy evaluation output.
#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub steps: Vec<StepMetrics>,
    pub episode_mean_utility: Vec<f64>,
}

impl EvalOutput {
    pub fn mean_utility(&self) -> f64 {
        let n = self.episode_mean_utility.len().max(1);
        self.episode_mean_utility.iter().sum::<f64>() / n as f64
    }
}

/// Greedy rollouts of a trained network: zero-noise forward passes,
/// argmax actions, per-step utilities recorded.
pub fn evaluate(
    env: &mut Environment,
    net: &CategoricalQNetwork,
    episodes: usize,
    steps_per_episode: usize,
    seed: u64,
) -> Result<EvalOutput, AgentError> {
    let mut env_rng = stream(seed, "test/env");
    let caps = env.caps();
    let mut steps = Vec::with_capacity(episodes * steps_per_episode);
    let mut episode_mean_utility = Vec::with_capacity(episodes);
    for episode in 1..=episodes {
        let obs = env.reset(&mut env_rng)?;
        let mut phi = normalize(&obs, &caps);
        let mut utility_sum = 0.0;
        for step in 1..=steps_per_episode {
            let q = net
                .action_values(&phi, NoiseMode::Zero)
                .map_err(AgentError::Neural)?;
            let action = argmax(&q);
            let (_, reward, next_obs) = env.step(action, &mut env_rng)?;
            utility_sum += reward.utility;
            steps.push(StepMetrics {
                episode,
                step,
                reward: reward.reward,
                utility: reward.utility,
                node0_mcw: next_obs.node0_mcw,
                n_vehicles: next_obs.vehicle_count,
                loss: None,
            });
            phi = normalize(&next_obs, &caps);
        }
        episode_mean_utility.push(utility_sum / steps_per_episode as f64);
    }
    Ok(EvalOutput {
        steps,
        episode_mean_utility,
    })
}

/// Convenience: `phi(s)` for the caps of a given environment.
pub fn normalized_state(env: &Environment, caps: &NormalizationCaps) -> Option<[f64; 4]> {
    env.current_observation().map(|obs| normalize(&obs, caps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ActionSpace;
    use crate::neural::AtomSupport;
    use crate::sim::SimConfig;

    fn tiny_network_config() -> NetworkConfig {
        NetworkConfig {
            input_dim: 4,
            hidden: 8,
            n_actions: 7,
            n_atoms: 11,
            v_min: 45.0,
            v_max: 50.0,
            sigma_init: 0.4,
        }
    }

    fn tiny_env() -> Environment {
        Environment::new(SimConfig::default(), vec![32, 128], 1.0, 3.0, 3.0, 6).unwrap()
    }

    /// A network whose outputs are exactly softmax(bias): all weights and
    /// sigmas zeroed, so the value/advantage logits equal the output
    /// biases regardless of input.
    fn bias_only_net(n_actions: usize, n_atoms: usize, v_min: f64, v_max: f64) -> CategoricalQNetwork {
        let cfg = NetworkConfig {
            input_dim: 4,
            hidden: 4,
            n_actions,
            n_atoms,
            v_min,
            v_max,
            sigma_init: 0.4,
        };
        let mut rng = stream(0, "agent/biasnet");
        let mut net = CategoricalQNetwork::new(&cfg, &mut rng).unwrap();
        let flat_len = net.parameters().len();
        net.set_parameters(&vec![0.0; flat_len]);
        net
    }

    fn set_action_logits(net: &mut CategoricalQNetwork, action: usize, logits: &[f64]) {
        let n_atoms = net.n_atoms();
        for (i, &l) in logits.iter().enumerate() {
            net.adv_out.mu_b[action * n_atoms + i] = l;
        }
    }

    #[test]
    fn select_action_prefers_the_point_mass_favorite() {
        let mut net = bias_only_net(7, 11, 45.0, 50.0);
        // Push action 3's mass to the top atom.
        set_action_logits(&mut net, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 30.0]);
        let mut rng = stream(1, "agent/point");
        // Sigma is zero, so sampled noise cannot move the outputs.
        let action = select_action(&mut net, &[0.5, 0.5, 0.5, 0.5], &mut rng).unwrap();
        assert_eq!(action, 3);
    }

    #[test]
    fn symmetric_network_breaks_ties_low() {
        let mut net = bias_only_net(7, 11, 45.0, 50.0);
        let mut rng = stream(2, "agent/tie");
        let action = select_action(&mut net, &[0.1, 0.2, 0.3, 0.4], &mut rng).unwrap();
        assert_eq!(action, 0);
    }

    #[test]
    fn fresh_network_exploration_has_entropy() {
        let mut rng = stream(3, "agent/entropy");
        let mut net = CategoricalQNetwork::new(&tiny_network_config(), &mut rng).unwrap();
        let mut counts = [0usize; 7];
        for _ in 0..1000 {
            let a = select_action(&mut net, &[0.5, 0.4, 0.3, 0.2], &mut rng).unwrap();
            counts[a] += 1;
        }
        let distinct = counts.iter().filter(|&&c| c > 0).count();
        assert!(distinct >= 2, "noise never changed the greedy action: {counts:?}");
    }

    #[test]
    fn vanishing_discount_projects_the_reward() {
        let mut rng = stream(4, "agent/gamma0");
        let mut net = CategoricalQNetwork::new(&tiny_network_config(), &mut rng).unwrap();
        net.resample_noise(&mut rng);
        let t = Transition {
            state: [0.0; 4],
            action: 1,
            n_step_reward: 47.3,
            next_state: [0.5; 4],
            steps: 1,
            terminal: false,
        };
        let target = compute_target(&t, &net, &net.clone(), 1e-12, NoiseMode::Zero).unwrap();
        let point = net.support().project_point(47.3);
        for (a, b) in target.iter().zip(&point) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn hand_built_two_atom_target() {
        // Support {0, 1}. Predict net ranks action 1 best at s'; target net
        // gives action 1 the distribution [0.25, 0.75]. With r = 0.3 and
        // gamma_eff = 0.9: T z0 = 0.3 -> split 0.7/0.3; T z1 = 1.2 clamps
        // to 1. Expected target: [0.175, 0.825].
        let mut predict = bias_only_net(2, 2, 0.0, 1.0);
        // Q(a0) low, Q(a1) high.
        set_action_logits(&mut predict, 0, &[5.0, 0.0]);
        set_action_logits(&mut predict, 1, &[0.0, 5.0]);
        let mut target_net = bias_only_net(2, 2, 0.0, 1.0);
        let p = 0.75f64;
        let logit = (p / (1.0 - p)).ln();
        set_action_logits(&mut target_net, 1, &[0.0, logit]);
        // Make the target net's own ranking favor action 0, so a correct
        // double-Q implementation must ignore it.
        set_action_logits(&mut target_net, 0, &[-3.0, 3.0]);

        let t = Transition {
            state: [0.0; 4],
            action: 0,
            n_step_reward: 0.3,
            next_state: [0.2; 4],
            steps: 1,
            terminal: false,
        };
        let got = compute_target(&t, &predict, &target_net, 0.9, NoiseMode::Zero).unwrap();
        assert!((got[0] - 0.175).abs() < 1e-9, "{got:?}");
        assert!((got[1] - 0.825).abs() < 1e-9, "{got:?}");
    }

    #[test]
    fn double_q_uses_predict_for_selection_and_target_for_valuation() {
        // Predict prefers action 2; target prefers action 5 and assigns
        // visibly different distributions to the two. The produced target
        // must equal the target net's distribution at the PREDICT argmax.
        let mut predict = bias_only_net(7, 11, 45.0, 50.0);
        set_action_logits(&mut predict, 2, &[0.0; 10].iter().chain(&[40.0]).copied().collect::<Vec<_>>().as_slice());
        let mut target_net = bias_only_net(7, 11, 45.0, 50.0);
        let mut top = vec![0.0; 11];
        top[10] = 40.0;
        set_action_logits(&mut target_net, 5, &top);
        let mut mid = vec![0.0; 11];
        mid[4] = 40.0;
        set_action_logits(&mut target_net, 2, &mid);

        let t = Transition {
            state: [0.0; 4],
            action: 0,
            n_step_reward: 0.0,
            next_state: [0.4; 4],
            steps: 1,
            terminal: false,
        };
        let got = compute_target(&t, &predict, &target_net, 0.999999, NoiseMode::Zero).unwrap();
        // The target-net distribution at action 2 is a point mass at atom
        // 4 (value 47); gamma ~ 1, r = 0 keeps it near atom 4. Had action
        // 5 been used, the mass would sit at the top atom instead.
        let mean: f64 = got
            .iter()
            .zip(target_net.support().atoms())
            .map(|(p, z)| p * z)
            .sum();
        assert!((mean - 47.0).abs() < 0.01, "target mean {mean}, expected ~47");
    }

    #[test]
    fn scalar_oracle_matches_distribution_expectation_without_clamping() {
        let mut rng = stream(5, "agent/oracle");
        let mut predict = CategoricalQNetwork::new(&tiny_network_config(), &mut rng).unwrap();
        let mut target_net = CategoricalQNetwork::new(&tiny_network_config(), &mut rng).unwrap();
        predict.resample_noise(&mut rng);
        target_net.resample_noise(&mut rng);
        // Q values live in [45, 50]; small reward and discount keep
        // r + gamma^k Q inside the support, so clamping never bites and
        // the projection preserves the expectation exactly.
        let t = Transition {
            state: [0.0; 4],
            action: 3,
            n_step_reward: 0.5,
            next_state: [0.3, 0.6, 0.1, 0.8],
            steps: 2,
            terminal: false,
        };
        let gamma_r = 0.95;
        let dist = compute_target(&t, &predict, &target_net, gamma_r, NoiseMode::Zero).unwrap();
        let dist_mean: f64 = dist
            .iter()
            .zip(target_net.support().atoms())
            .map(|(p, z)| p * z)
            .sum();
        let scalar = scalar_td_target(&t, &predict, &target_net, gamma_r, NoiseMode::Zero).unwrap();
        assert!((dist_mean - scalar).abs() < 1e-9, "{dist_mean} vs {scalar}");
    }

    #[test]
    fn double_q_with_shared_parameters_reduces_to_classical_target() {
        let mut rng = stream(6, "agent/classical");
        let net = CategoricalQNetwork::new(&tiny_network_config(), &mut rng).unwrap();
        let t = Transition {
            state: [0.0; 4],
            action: 0,
            n_step_reward: 1.0,
            next_state: [0.9, 0.2, 0.4, 0.5],
            steps: 1,
            terminal: false,
        };
        let double = scalar_td_target(&t, &net, &net, 0.99, NoiseMode::Zero).unwrap();
        let classical = classical_td_target(&t, &net, 0.99, NoiseMode::Zero).unwrap();
        assert_eq!(double, classical);
    }

    #[test]
    fn undersized_buffer_never_trains() {
        let mut env = tiny_env();
        let cfg = AgentConfig {
            episodes: 1,
            steps_per_episode: 5,
            buffer_capacity: 10,
            mini_batch: 32,
            network: tiny_network_config(),
            ..AgentConfig::default()
        };
        let out = train(&mut env, &cfg, 11).unwrap();
        assert_eq!(out.gradient_steps, 0);
        assert!(out.steps.iter().all(|s| s.loss.is_none()));
        assert_eq!(out.steps.len(), 5);
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut env = tiny_env();
            let cfg = AgentConfig {
                episodes: 2,
                steps_per_episode: 8,
                buffer_capacity: 64,
                mini_batch: 4,
                network: tiny_network_config(),
                ..AgentConfig::default()
            };
            train(&mut env, &cfg, 42).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.steps, b.steps);
        assert_eq!(a.episode_mean_utility, b.episode_mean_utility);
        assert_eq!(a.net.parameters(), b.net.parameters());
    }

    #[test]
    fn target_syncs_exactly_at_episode_boundaries() {
        let mut env = tiny_env();
        let cfg = AgentConfig {
            episodes: 3,
            steps_per_episode: 10,
            buffer_capacity: 64,
            mini_batch: 4,
            network: tiny_network_config(),
            ..AgentConfig::default()
        };
        let mut trainer = Trainer::new(cfg, 13).unwrap();
        for _ in 0..3 {
            let before_target = trainer.target_net().parameters();
            trainer.run_episode(&mut env).unwrap();
            let predict = trainer.predict_net().parameters();
            let target = trainer.target_net().parameters();
            assert_eq!(predict, target, "sync at episode boundary");
            // Gradient steps ran, so the prediction net moved during the
            // episode while the target stayed put until the boundary.
            if trainer.gradient_steps() > 0 {
                assert_ne!(before_target, target);
            }
        }
    }

    #[test]
    fn evaluation_is_greedy_and_deterministic() {
        let mut rng = stream(7, "agent/evaldet");
        let net = CategoricalQNetwork::new(&tiny_network_config(), &mut rng).unwrap();
        let mut env = tiny_env();
        let a = evaluate(&mut env, &net, 2, 6, 99).unwrap();
        let mut env2 = tiny_env();
        let b = evaluate(&mut env2, &net, 2, 6, 99).unwrap();
        assert_eq!(a.steps, b.steps);
        assert_eq!(a.episode_mean_utility, b.episode_mean_utility);
    }

    #[test]
    fn empty_network_episode_is_all_ones() {
        let mut env =
            Environment::new(SimConfig::default(), vec![32, 128], 1.0, 0.0, 0.0, 0).unwrap();
        let mut rng = stream(8, "agent/lone");
        let net = CategoricalQNetwork::new(&tiny_network_config(), &mut rng).unwrap();
        let out = evaluate(&mut env, &net, 1, 10, 5).unwrap();
        assert!(out.steps.iter().all(|s| s.utility == 1.0));
        assert_eq!(out.episode_mean_utility[0], 1.0);
    }

    #[test]
    fn action_values_use_the_action_space_width() {
        let mut rng = stream(9, "agent/width");
        let net = CategoricalQNetwork::new(&tiny_network_config(), &mut rng).unwrap();
        let q = net.action_values(&[0.1, 0.2, 0.3, 0.4], NoiseMode::Zero).unwrap();
        assert_eq!(q.len(), ActionSpace::COUNT);
    }

    #[test]
    fn rejects_out_of_range_n_step() {
        let cfg = AgentConfig {
            n_step: 6,
            ..AgentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(AgentError::InvalidConfig(_))));
    }

    #[test]
    fn terminal_transitions_skip_bootstrapping() {
        let mut rng = stream(10, "agent/terminal");
        let net = CategoricalQNetwork::new(&tiny_network_config(), &mut rng).unwrap();
        let t = Transition {
            state: [0.0; 4],
            action: 0,
            n_step_reward: 46.0,
            next_state: [0.5; 4],
            steps: 2,
            terminal: true,
        };
        let target = compute_target(&t, &net, &net.clone(), 0.99, NoiseMode::Zero).unwrap();
        let expected = AtomSupport::new(45.0, 50.0, 11).unwrap().project_point(46.0);
        assert_eq!(target, expected);
    }
}
