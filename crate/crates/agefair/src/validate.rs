//! Invariant suite: analytic cross-checks that gate the artifact.
//!
//! Everything here is an independent route to a quantity the main code
//! computes some other way: the saturation collision probability from the
//! two-equation fixed point instead of slot simulation, gradients from
//! central finite differences instead of backpropagation, and so on. The
//! `validate` CLI command runs all of them and fails loudly.

use rand::Rng;

use crate::neural::{
    Activation, AtomSupport, CategoricalQNetwork, DenseLayer, NetworkConfig, NoiseMode,
    NoisyLayer, TrainSample,
};
use crate::seeds::stream;
use crate::sim::{step_contention, update_aoi, Node, SimClock, SimConfig, SlotOutcome};

/// Conditional collision probability of `n` saturated equal-window nodes
/// from the classical two-equation fixed point:
///
/// ```text
/// tau(p) = 2(1-2p) / ((1-2p)(W+1) + p W (1 - (2p)^m))
/// p      = 1 - (1 - tau)^(n-1)
/// ```
///
/// solved for `p` by bisection (the residual is continuous with opposite
/// signs at the ends of (0, 1)).
pub fn bianchi_collision_probability(n: u32, w0: u64, max_stage: u8) -> f64 {
    assert!(n >= 2, "fixed point needs at least two contenders");
    let w = w0 as f64;
    let m = i32::from(max_stage);
    let tau = |p: f64| -> f64 {
        2.0 * (1.0 - 2.0 * p) / ((1.0 - 2.0 * p) * (w + 1.0) + p * w * (1.0 - (2.0 * p).powi(m)))
    };
    let residual = |p: f64| -> f64 { p - (1.0 - (1.0 - tau(p)).powi(n as i32 - 1)) };
    let mut lo = 1e-9;
    let mut hi = 1.0 - 1e-9;
    debug_assert!(residual(lo) < 0.0 && residual(hi) > 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Transmission-attempt accounting from a long contention run.
#[derive(Debug, Clone, Copy)]
pub struct CollisionMeasurement {
    pub attempts: u64,
    pub collided_attempts: u64,
    pub micro_slots: u64,
}

impl CollisionMeasurement {
    pub fn collision_probability(&self) -> f64 {
        self.collided_attempts as f64 / self.attempts as f64
    }
}

/// Runs `n` saturated equal-window nodes for at least `min_slots`
/// micro-slots through the public single-step ops and counts per-attempt
/// collisions.
pub fn measure_collision_probability(
    n: u32,
    w0: u64,
    max_stage: u8,
    min_slots: u64,
    seed: u64,
) -> CollisionMeasurement {
    let config = SimConfig {
        max_backoff_stage: max_stage,
        ..SimConfig::default()
    };
    let mut rng = stream(seed, "validate/bianchi");
    let mut nodes: Vec<Node> = (0..n)
        .map(|id| Node::init(id, w0, 0, &mut rng).expect("w0 >= 2"))
        .collect();
    let mut clock = SimClock::default();
    let mut attempts = 0u64;
    let mut collided = 0u64;
    while clock.slot < min_slots {
        let outcome = step_contention(&mut nodes, &mut clock, &config, &mut rng).expect("nodes non-empty");
        match &outcome {
            SlotOutcome::Idle => {}
            SlotOutcome::Success { .. } => attempts += 1,
            SlotOutcome::Collision { transmitters } => {
                attempts += transmitters.len() as u64;
                collided += transmitters.len() as u64;
            }
        }
        let elapsed = outcome.elapsed_slots(&config);
        update_aoi(&mut nodes, &outcome, elapsed, clock.slot);
    }
    CollisionMeasurement {
        attempts,
        collided_attempts: collided,
        micro_slots: clock.slot,
    }
}

/// Comparison of an analytic gradient against central finite differences:
/// relative error with an absolute floor so that exactly-zero gradients
/// (dead ReLU units) compare as equal.
fn gradient_rel_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-9 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

const FD_STEP: f64 = 1e-4;

/// Central-difference comparison at step 1e-4, retried at 1e-6 when the
/// error is large: a ReLU pre-activation sitting within the step of zero
/// makes the wide estimate straddle the kink, and the narrow step resolves
/// it.
fn fd_rel_error(analytic: f64, mut loss_at: impl FnMut(f64) -> f64) -> f64 {
    let mut best = f64::INFINITY;
    for h in [FD_STEP, 1e-6] {
        let numeric = (loss_at(h) - loss_at(-h)) / (2.0 * h);
        best = best.min(gradient_rel_error(analytic, numeric));
        if best < 1e-3 {
            break;
        }
    }
    best
}

/// Worst relative error of dense-layer backward gradients against central
/// finite differences over `instances` random instances, using a squared
/// error head.
pub fn gradcheck_dense(instances: usize, seed: u64) -> f64 {
    let mut rng = stream(seed, "validate/gradcheck-dense");
    let mut worst = 0.0f64;
    for k in 0..instances {
        let activation = if k % 2 == 0 { Activation::Relu } else { Activation::None };
        let (out_dim, in_dim) = (rng.random_range(1..5), rng.random_range(1..5));
        let mut layer = DenseLayer::new(out_dim, in_dim, activation, &mut rng);
        let input: Vec<f64> = (0..in_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..out_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |layer: &DenseLayer| -> f64 {
            let (mut pre, mut out) = (vec![], vec![]);
            layer.forward(&input, &mut pre, &mut out);
            out.iter().zip(&target).map(|(y, t)| 0.5 * (y - t) * (y - t)).sum()
        };
        let (mut pre, mut out) = (vec![], vec![]);
        layer.forward(&input, &mut pre, &mut out);
        let d_out: Vec<f64> = out.iter().zip(&target).map(|(y, t)| y - t).collect();
        let mut grads = layer.zero_grads();
        let mut d_input = vec![0.0; in_dim];
        layer.backward(&input, &pre, &d_out, &mut grads, &mut d_input);

        let n_params = layer.weights.len() + layer.biases.len();
        for p in 0..n_params {
            let analytic = if p < layer.weights.len() {
                grads.weights[p]
            } else {
                grads.biases[p - layer.weights.len()]
            };
            let bump = |layer: &mut DenseLayer, delta: f64| {
                if p < layer.weights.len() {
                    layer.weights[p] += delta;
                } else {
                    let i = p - layer.weights.len();
                    layer.biases[i] += delta;
                }
            };
            worst = worst.max(fd_rel_error(analytic, |delta| {
                bump(&mut layer, delta);
                let value = loss(&layer);
                bump(&mut layer, -delta);
                value
            }));
        }
    }
    worst
}

/// Worst relative error of noisy-layer backward gradients (mu and sigma
/// paths, sampled noise held fixed) against central finite differences.
pub fn gradcheck_noisy(instances: usize, seed: u64) -> f64 {
    let mut rng = stream(seed, "validate/gradcheck-noisy");
    let mut worst = 0.0f64;
    for k in 0..instances {
        let activation = if k % 2 == 0 { Activation::Relu } else { Activation::None };
        let (out_dim, in_dim) = (rng.random_range(1..5), rng.random_range(1..5));
        let mut layer = NoisyLayer::new(out_dim, in_dim, 0.4, activation, &mut rng);
        layer.resample(&mut rng);
        let input: Vec<f64> = (0..in_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..out_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |layer: &NoisyLayer| -> f64 {
            let (mut pre, mut out) = (vec![], vec![]);
            layer.forward(&input, NoiseMode::Sampled, &mut pre, &mut out);
            out.iter().zip(&target).map(|(y, t)| 0.5 * (y - t) * (y - t)).sum()
        };
        let (mut pre, mut out) = (vec![], vec![]);
        layer.forward(&input, NoiseMode::Sampled, &mut pre, &mut out);
        let d_out: Vec<f64> = out.iter().zip(&target).map(|(y, t)| y - t).collect();
        let mut grads = layer.zero_grads();
        let mut d_input = vec![0.0; in_dim];
        layer.backward(&input, &pre, &d_out, NoiseMode::Sampled, &mut grads, &mut d_input);

        let analytic: Vec<f64> = grads
            .mu_w
            .iter()
            .chain(&grads.sigma_w)
            .chain(&grads.mu_b)
            .chain(&grads.sigma_b)
            .copied()
            .collect();
        let wlen = layer.mu_w.len();
        for (p, &a) in analytic.iter().enumerate() {
            let bump = |layer: &mut NoisyLayer, delta: f64| {
                if p < wlen {
                    layer.mu_w[p] += delta;
                } else if p < 2 * wlen {
                    layer.sigma_w[p - wlen] += delta;
                } else if p < 2 * wlen + out_dim {
                    layer.mu_b[p - 2 * wlen] += delta;
                } else {
                    layer.sigma_b[p - 2 * wlen - out_dim] += delta;
                }
            };
            worst = worst.max(fd_rel_error(a, |delta| {
                bump(&mut layer, delta);
                let value = loss(&layer);
                bump(&mut layer, -delta);
                value
            }));
        }
    }
    worst
}

/// Worst relative error of the full network's backpropagated gradients
/// (through softmax, dueling aggregation, both branches and the trunk)
/// against central finite differences on the cross-entropy loss.
pub fn gradcheck_network(instances: usize, seed: u64) -> f64 {
    let mut rng = stream(seed, "validate/gradcheck-net");
    let cfg = NetworkConfig {
        input_dim: 4,
        hidden: 5,
        n_actions: 3,
        n_atoms: 7,
        v_min: 45.0,
        v_max: 50.0,
        sigma_init: 0.4,
    };
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let mut net = CategoricalQNetwork::new(&cfg, &mut rng).expect("valid config");
        net.resample_noise(&mut rng);
        let input = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let action = rng.random_range(0..cfg.n_actions);
        let target = net
            .support()
            .project_point(rng.random_range(cfg.v_min..cfg.v_max));
        let batch = [TrainSample { input, action, target: target.clone() }];
        let (analytic, _) = net.loss_gradients(&batch).expect("finite");
        let base = net.parameters();
        let mut params = base.clone();
        for (p, &a) in analytic.iter().enumerate() {
            worst = worst.max(fd_rel_error(a, |delta| {
                params[p] = base[p] + delta;
                net.set_parameters(&params);
                let value = net.loss(&input, action, &target).expect("finite");
                params[p] = base[p];
                net.set_parameters(&params);
                value
            }));
        }
    }
    worst
}

/// Worst absolute deviation of projected-row mass from 1 over random
/// rewards, discounts, and distributions.
pub fn projection_mass_error(cases: usize, seed: u64) -> f64 {
    let mut rng = stream(seed, "validate/projection");
    let support = AtomSupport::new(45.0, 50.0, 51).expect("valid support");
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let mut probs: Vec<f64> = (0..51).map(|_| rng.random_range(0.0..1.0)).collect();
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        let reward = rng.random_range(-5.0..8.0);
        let gamma = rng.random_range(0.0..1.0);
        let projected = support.project(reward, gamma, &probs);
        let mass: f64 = projected.iter().sum();
        worst = worst.max((mass - 1.0).abs());
        let inside = projected.len() == 51 && projected.iter().all(|&p| p >= 0.0);
        if !inside {
            return f64::INFINITY;
        }
    }
    worst
}

/// Checks that a noisy layer with all sigma parameters zeroed produces
/// bit-identical outputs to the dense layer built from its mu parameters,
/// even with noise sampled.
pub fn sigma_zero_matches_dense(seed: u64) -> bool {
    let mut rng = stream(seed, "validate/sigma-zero");
    for _ in 0..20 {
        let (out_dim, in_dim) = (rng.random_range(1..6), rng.random_range(1..6));
        let mut noisy = NoisyLayer::new(out_dim, in_dim, 0.4, Activation::Relu, &mut rng);
        noisy.sigma_w.iter_mut().for_each(|s| *s = 0.0);
        noisy.sigma_b.iter_mut().for_each(|s| *s = 0.0);
        noisy.resample(&mut rng);
        let dense = DenseLayer {
            out_dim,
            in_dim,
            weights: noisy.mu_w.clone(),
            biases: noisy.mu_b.clone(),
            activation: Activation::Relu,
        };
        let input: Vec<f64> = (0..in_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (mut pre_n, mut out_n) = (vec![], vec![]);
        let (mut pre_d, mut out_d) = (vec![], vec![]);
        noisy.forward(&input, NoiseMode::Sampled, &mut pre_n, &mut out_n);
        dense.forward(&input, &mut pre_d, &mut out_d);
        if out_n != out_d {
            return false;
        }
    }
    true
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    pearson(&rx, &ry)
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}
