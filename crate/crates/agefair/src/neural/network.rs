//! The categorical dueling Q-network and its training step.
//!
//! Topology: two dense ReLU layers, then two branches of noisy layers. The
//! value branch emits one logit per atom, the advantage branch one logit
//! per (action, atom). Aggregation is atom-wise with advantage mean
//! subtraction, then a softmax over atoms per action turns logits into a
//! value distribution.

use rand::Rng;
use thiserror::Error;

use super::layers::{Activation, DenseGrads, DenseLayer, NoiseMode, NoisyGrads, NoisyLayer};

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("non-finite input to forward pass")]
    InvalidInput,
    #[error("target distribution has {got} atoms, network has {want}")]
    TargetShape { got: usize, want: usize },
    #[error("training diverged: non-finite gradient or loss")]
    TrainingDiverged,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// The equidistant atom support `z` of the value distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomSupport {
    pub v_min: f64,
    pub v_max: f64,
    atoms: Vec<f64>,
}

impl AtomSupport {
    pub fn new(v_min: f64, v_max: f64, n_atoms: usize) -> Result<Self, NeuralError> {
        if n_atoms < 2 {
            return Err(NeuralError::InvalidConfig("need at least 2 atoms".into()));
        }
        if !(v_min < v_max) {
            return Err(NeuralError::InvalidConfig(format!(
                "v_min {v_min} must be below v_max {v_max}"
            )));
        }
        // Convex-combination form so both endpoints are exact.
        let last = (n_atoms - 1) as f64;
        let atoms = (0..n_atoms)
            .map(|i| (v_min * (last - i as f64) + v_max * i as f64) / last)
            .collect();
        Ok(Self { v_min, v_max, atoms })
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Atom spacing.
    pub fn delta(&self) -> f64 {
        (self.v_max - self.v_min) / (self.atoms.len() - 1) as f64
    }

    /// Categorical projection of `r + gamma_eff * z` under `next_probs`
    /// onto this support: each shifted atom is clamped into
    /// `[v_min, v_max]` and its mass split linearly between the two
    /// neighboring atoms.
    pub fn project(&self, reward: f64, gamma_eff: f64, next_probs: &[f64]) -> Vec<f64> {
        let n = self.atoms.len();
        let delta = self.delta();
        let mut out = vec![0.0; n];
        for (j, &p) in next_probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let tz = (reward + gamma_eff * self.atoms[j]).clamp(self.v_min, self.v_max);
            let b = ((tz - self.v_min) / delta).clamp(0.0, (n - 1) as f64);
            let lo = b.floor();
            let hi = b.ceil();
            if lo == hi {
                out[lo as usize] += p;
            } else {
                out[lo as usize] += p * (hi - b);
                out[hi as usize] += p * (b - lo);
            }
        }
        out
    }

    /// Projection of a point mass at `value` (terminal targets).
    pub fn project_point(&self, value: f64) -> Vec<f64> {
        self.project(value, 0.0, &[1.0])
    }
}

/// Batch form of the categorical projection: one row per transition.
pub fn project_target(
    rewards: &[f64],
    next_dists: &[Vec<f64>],
    gamma_eff: f64,
    support: &AtomSupport,
) -> Vec<Vec<f64>> {
    rewards
        .iter()
        .zip(next_dists)
        .map(|(&r, next)| support.project(r, gamma_eff, next))
        .collect()
}

/// Expected value of each action's distribution: `Q(a) = sum_i p(a,i) z_i`.
pub fn q_values(dist: &[f64], atoms: &[f64]) -> Vec<f64> {
    dist.chunks_exact(atoms.len())
        .map(|row| row.iter().zip(atoms).map(|(p, z)| p * z).sum())
        .collect()
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Shape and initialization parameters of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub n_actions: usize,
    pub n_atoms: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub sigma_init: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_dim: 4,
            hidden: 64,
            n_actions: 7,
            n_atoms: 51,
            v_min: 45.0,
            v_max: 50.0,
            sigma_init: 0.4,
        }
    }
}

/// One training sample: a normalized state, the taken action, and the
/// projected target distribution for that action.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub input: [f64; 4],
    pub action: usize,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalQNetwork {
    pub l1: DenseLayer,
    pub l2: DenseLayer,
    pub value_hidden: NoisyLayer,
    pub value_out: NoisyLayer,
    pub adv_hidden: NoisyLayer,
    pub adv_out: NoisyLayer,
    support: AtomSupport,
    n_actions: usize,
    n_atoms: usize,
}

/// Scratch space of one cached forward pass, consumed by the backward pass.
#[derive(Debug, Default, Clone)]
struct ForwardCache {
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    zv1: Vec<f64>,
    av1: Vec<f64>,
    zv2: Vec<f64>,
    v_logits: Vec<f64>,
    za1: Vec<f64>,
    aa1: Vec<f64>,
    za2: Vec<f64>,
    a_logits: Vec<f64>,
    probs: Vec<f64>,
}

struct Gradients {
    l1: DenseGrads,
    l2: DenseGrads,
    value_hidden: NoisyGrads,
    value_out: NoisyGrads,
    adv_hidden: NoisyGrads,
    adv_out: NoisyGrads,
}

impl CategoricalQNetwork {
    pub fn new(config: &NetworkConfig, rng: &mut impl Rng) -> Result<Self, NeuralError> {
        if config.input_dim == 0 || config.hidden == 0 || config.n_actions == 0 {
            return Err(NeuralError::InvalidConfig("zero dimension".into()));
        }
        let support = AtomSupport::new(config.v_min, config.v_max, config.n_atoms)?;
        let h = config.hidden;
        let s = config.sigma_init;
        Ok(Self {
            l1: DenseLayer::new(h, config.input_dim, Activation::Relu, rng),
            l2: DenseLayer::new(h, h, Activation::Relu, rng),
            value_hidden: NoisyLayer::new(h, h, s, Activation::Relu, rng),
            value_out: NoisyLayer::new(config.n_atoms, h, s, Activation::None, rng),
            adv_hidden: NoisyLayer::new(h, h, s, Activation::Relu, rng),
            adv_out: NoisyLayer::new(config.n_actions * config.n_atoms, h, s, Activation::None, rng),
            support,
            n_actions: config.n_actions,
            n_atoms: config.n_atoms,
        })
    }

    /// Assembles a network from deserialized layers, validating that the
    /// pieces chain into the fixed trunk-plus-two-branches topology.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        l1: DenseLayer,
        l2: DenseLayer,
        value_hidden: NoisyLayer,
        value_out: NoisyLayer,
        adv_hidden: NoisyLayer,
        adv_out: NoisyLayer,
        support: AtomSupport,
        n_actions: usize,
        n_atoms: usize,
    ) -> Result<Self, NeuralError> {
        let chained = l2.in_dim == l1.out_dim
            && value_hidden.in_dim == l2.out_dim
            && value_out.in_dim == value_hidden.out_dim
            && adv_hidden.in_dim == l2.out_dim
            && adv_out.in_dim == adv_hidden.out_dim;
        let heads = value_out.out_dim == n_atoms
            && adv_out.out_dim == n_actions * n_atoms
            && support.len() == n_atoms;
        if !chained || !heads || n_actions == 0 {
            return Err(NeuralError::InvalidConfig(
                "layer dimensions do not form a valid network".into(),
            ));
        }
        Ok(Self {
            l1,
            l2,
            value_hidden,
            value_out,
            adv_hidden,
            adv_out,
            support,
            n_actions,
            n_atoms,
        })
    }

    pub fn support(&self) -> &AtomSupport {
        &self.support
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn hidden_dim(&self) -> usize {
        self.l1.out_dim
    }

    pub fn input_dim(&self) -> usize {
        self.l1.in_dim
    }

    /// Draws fresh noise for every noisy layer.
    pub fn resample_noise(&mut self, rng: &mut impl Rng) {
        self.value_hidden.resample(rng);
        self.value_out.resample(rng);
        self.adv_hidden.resample(rng);
        self.adv_out.resample(rng);
    }

    fn forward_cached(&self, input: &[f64], mode: NoiseMode, cache: &mut ForwardCache) {
        self.l1.forward(input, &mut cache.z1, &mut cache.a1);
        self.l2.forward(&cache.a1, &mut cache.z2, &mut cache.a2);
        self.value_hidden
            .forward(&cache.a2, mode, &mut cache.zv1, &mut cache.av1);
        self.value_out
            .forward(&cache.av1, mode, &mut cache.zv2, &mut cache.v_logits);
        self.adv_hidden
            .forward(&cache.a2, mode, &mut cache.za1, &mut cache.aa1);
        self.adv_out
            .forward(&cache.aa1, mode, &mut cache.za2, &mut cache.a_logits);

        // Dueling aggregation per atom, then per-action softmax over atoms.
        let (n_act, n_at) = (self.n_actions, self.n_atoms);
        cache.probs.clear();
        cache.probs.resize(n_act * n_at, 0.0);
        let mut adv_mean = vec![0.0; n_at];
        for a in 0..n_act {
            for i in 0..n_at {
                adv_mean[i] += cache.a_logits[a * n_at + i];
            }
        }
        for m in &mut adv_mean {
            *m /= n_act as f64;
        }
        for a in 0..n_act {
            let row = &mut cache.probs[a * n_at..(a + 1) * n_at];
            let mut max_logit = f64::NEG_INFINITY;
            for i in 0..n_at {
                let logit = cache.v_logits[i] + cache.a_logits[a * n_at + i] - adv_mean[i];
                row[i] = logit;
                max_logit = max_logit.max(logit);
            }
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max_logit).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
    }

    /// Probability matrix `[n_actions x n_atoms]`, row-major. Each row is
    /// the value distribution of one action and sums to 1.
    pub fn forward(&self, input: &[f64], mode: NoiseMode) -> Result<Vec<f64>, NeuralError> {
        if input.len() != self.input_dim() || input.iter().any(|v| !v.is_finite()) {
            return Err(NeuralError::InvalidInput);
        }
        let mut cache = ForwardCache::default();
        self.forward_cached(input, mode, &mut cache);
        Ok(cache.probs)
    }

    /// Expected Q value per action.
    pub fn action_values(&self, input: &[f64], mode: NoiseMode) -> Result<Vec<f64>, NeuralError> {
        Ok(q_values(&self.forward(input, mode)?, self.support.atoms()))
    }

    /// One gradient-descent step on the mean cross-entropy between the
    /// samples' target distributions and the predicted distributions of
    /// their taken actions. Noise is used as currently drawn and held fixed
    /// through the backward pass. Returns the mean loss.
    pub fn train_step(&mut self, batch: &[TrainSample], lr: f64) -> Result<f64, NeuralError> {
        if lr <= 0.0 {
            return Err(NeuralError::InvalidConfig("non-positive learning rate".into()));
        }
        let (grads, mean_loss) = self.batch_gradients(batch)?;
        let scale = lr / batch.len() as f64;
        if !mean_loss.is_finite() || !grads_finite(&grads) {
            return Err(NeuralError::TrainingDiverged);
        }
        self.l1.apply_step(&grads.l1, scale);
        self.l2.apply_step(&grads.l2, scale);
        self.value_hidden.apply_step(&grads.value_hidden, scale);
        self.value_out.apply_step(&grads.value_out, scale);
        self.adv_hidden.apply_step(&grads.adv_hidden, scale);
        self.adv_out.apply_step(&grads.adv_out, scale);
        Ok(mean_loss)
    }

    /// Mean loss and the mean-gradient vector (flattened in
    /// [`parameters`] order) without stepping. Used by the
    /// finite-difference checks.
    ///
    /// [`parameters`]: CategoricalQNetwork::parameters
    pub fn loss_gradients(&self, batch: &[TrainSample]) -> Result<(Vec<f64>, f64), NeuralError> {
        let (grads, mean_loss) = self.batch_gradients(batch)?;
        let inv = 1.0 / batch.len() as f64;
        let mut flat = Vec::new();
        for g in [&grads.l1, &grads.l2] {
            flat.extend(g.weights.iter().map(|v| v * inv));
            flat.extend(g.biases.iter().map(|v| v * inv));
        }
        for g in [&grads.value_hidden, &grads.value_out, &grads.adv_hidden, &grads.adv_out] {
            flat.extend(g.mu_w.iter().map(|v| v * inv));
            flat.extend(g.sigma_w.iter().map(|v| v * inv));
            flat.extend(g.mu_b.iter().map(|v| v * inv));
            flat.extend(g.sigma_b.iter().map(|v| v * inv));
        }
        Ok((flat, mean_loss))
    }

    fn batch_gradients(&self, batch: &[TrainSample]) -> Result<(Gradients, f64), NeuralError> {
        if batch.is_empty() {
            return Err(NeuralError::InvalidConfig("empty batch".into()));
        }
        let mode = NoiseMode::Sampled;
        let (n_act, n_at) = (self.n_actions, self.n_atoms);
        let mut grads = self.zero_grads();
        let mut cache = ForwardCache::default();
        let mut total_loss = 0.0;

        let mut d_logits = vec![0.0; n_act * n_at];
        let mut d_v = vec![0.0; n_at];
        let mut d_adv = vec![0.0; n_act * n_at];
        let mut d_av1 = vec![0.0; self.value_hidden.out_dim];
        let mut d_aa1 = vec![0.0; self.adv_hidden.out_dim];
        let mut d_a2_v = vec![0.0; self.l2.out_dim];
        let mut d_a2_a = vec![0.0; self.l2.out_dim];
        let mut d_a2 = vec![0.0; self.l2.out_dim];
        let mut d_a1 = vec![0.0; self.l1.out_dim];
        let mut d_input = vec![0.0; self.input_dim()];

        for sample in batch {
            if sample.action >= n_act {
                return Err(NeuralError::InvalidConfig(format!(
                    "action {} out of range",
                    sample.action
                )));
            }
            if sample.target.len() != n_at {
                return Err(NeuralError::TargetShape {
                    got: sample.target.len(),
                    want: n_at,
                });
            }
            if sample.input.iter().any(|v| !v.is_finite()) {
                return Err(NeuralError::InvalidInput);
            }
            self.forward_cached(&sample.input, mode, &mut cache);

            let row = &cache.probs[sample.action * n_at..(sample.action + 1) * n_at];
            let mut loss = 0.0;
            for (p, m) in row.iter().zip(&sample.target) {
                if *m > 0.0 {
                    loss -= m * p.max(1e-300).ln();
                }
            }
            total_loss += loss;

            // Softmax + cross-entropy: d logits of the taken action's row
            // is (p - m); other rows carry no loss.
            d_logits.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..n_at {
                d_logits[sample.action * n_at + i] = row[i] - sample.target[i];
            }
            // Dueling aggregation backward.
            for i in 0..n_at {
                d_v[i] = (0..n_act).map(|a| d_logits[a * n_at + i]).sum();
            }
            for a in 0..n_act {
                for i in 0..n_at {
                    d_adv[a * n_at + i] = d_logits[a * n_at + i] - d_v[i] / n_act as f64;
                }
            }

            self.value_out
                .backward(&cache.av1, &cache.zv2, &d_v, mode, &mut grads.value_out, &mut d_av1);
            self.value_hidden.backward(
                &cache.a2,
                &cache.zv1,
                &d_av1,
                mode,
                &mut grads.value_hidden,
                &mut d_a2_v,
            );
            self.adv_out
                .backward(&cache.aa1, &cache.za2, &d_adv, mode, &mut grads.adv_out, &mut d_aa1);
            self.adv_hidden.backward(
                &cache.a2,
                &cache.za1,
                &d_aa1,
                mode,
                &mut grads.adv_hidden,
                &mut d_a2_a,
            );
            for ((d, v), a) in d_a2.iter_mut().zip(&d_a2_v).zip(&d_a2_a) {
                *d = v + a;
            }
            self.l2
                .backward(&cache.a1, &cache.z2, &d_a2, &mut grads.l2, &mut d_a1);
            self.l1
                .backward(&sample.input, &cache.z1, &d_a1, &mut grads.l1, &mut d_input);
        }

        Ok((grads, total_loss / batch.len() as f64))
    }

    /// Single-sample gradient step: cross-entropy against `target` for the
    /// taken action, backpropagated with the current noise held fixed.
    pub fn backward_and_step(
        &mut self,
        input: [f64; 4],
        action: usize,
        target: Vec<f64>,
        lr: f64,
    ) -> Result<f64, NeuralError> {
        self.train_step(&[TrainSample { input, action, target }], lr)
    }

    fn zero_grads(&self) -> Gradients {
        Gradients {
            l1: self.l1.zero_grads(),
            l2: self.l2.zero_grads(),
            value_hidden: self.value_hidden.zero_grads(),
            value_out: self.value_out.zero_grads(),
            adv_hidden: self.adv_hidden.zero_grads(),
            adv_out: self.adv_out.zero_grads(),
        }
    }

    /// All parameters flattened in a fixed order (for finite-difference
    /// checks and tests).
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in [&self.l1, &self.l2] {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.biases);
        }
        for layer in [&self.value_hidden, &self.value_out, &self.adv_hidden, &self.adv_out] {
            out.extend_from_slice(&layer.mu_w);
            out.extend_from_slice(&layer.sigma_w);
            out.extend_from_slice(&layer.mu_b);
            out.extend_from_slice(&layer.sigma_b);
        }
        out
    }

    /// Writes back a parameter vector produced by [`parameters`].
    ///
    /// [`parameters`]: CategoricalQNetwork::parameters
    pub fn set_parameters(&mut self, params: &[f64]) {
        let mut offset = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&params[offset..offset + dst.len()]);
            offset += dst.len();
        };
        for layer in [&mut self.l1, &mut self.l2] {
            take(&mut layer.weights);
            take(&mut layer.biases);
        }
        for layer in [
            &mut self.value_hidden,
            &mut self.value_out,
            &mut self.adv_hidden,
            &mut self.adv_out,
        ] {
            take(&mut layer.mu_w);
            take(&mut layer.sigma_w);
            take(&mut layer.mu_b);
            take(&mut layer.sigma_b);
        }
        assert_eq!(offset, params.len(), "parameter vector length mismatch");
    }

    /// Cross-entropy loss of one sample without updating parameters.
    pub fn loss(&self, input: &[f64], action: usize, target: &[f64]) -> Result<f64, NeuralError> {
        let probs = self.forward(input, NoiseMode::Sampled)?;
        let row = &probs[action * self.n_atoms..(action + 1) * self.n_atoms];
        let mut loss = 0.0;
        for (p, m) in row.iter().zip(target) {
            if *m > 0.0 {
                loss -= m * p.max(1e-300).ln();
            }
        }
        Ok(loss)
    }
}

fn grads_finite(grads: &Gradients) -> bool {
    let dense = |g: &DenseGrads| g.weights.iter().chain(&g.biases).all(|v| v.is_finite());
    let noisy = |g: &NoisyGrads| {
        g.mu_w
            .iter()
            .chain(&g.sigma_w)
            .chain(&g.mu_b)
            .chain(&g.sigma_b)
            .all(|v| v.is_finite())
    };
    dense(&grads.l1)
        && dense(&grads.l2)
        && noisy(&grads.value_hidden)
        && noisy(&grads.value_out)
        && noisy(&grads.adv_hidden)
        && noisy(&grads.adv_out)
}
