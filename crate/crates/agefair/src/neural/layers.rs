//! Dense and noisy linear layers with hand-rolled backward passes.
//!
//! All math is 64-bit. Weight matrices are row-major `[out x in]`. The
//! noisy layer carries factorized Gaussian noise: per-input and per-output
//! draws squashed through `f(x) = sgn(x)*sqrt(|x|)`, combined as
//! `eps_w[i][j] = f(eps_out_i) * f(eps_in_j)` and `eps_b[i] = f(eps_out_i)`.
//! A draw stays constant across one forward/backward pair; resampling is
//! explicit.

use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::None => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::None => 1.0,
        }
    }
}

/// Whether a forward pass uses the current noise draw or forces it to zero
/// (deterministic evaluation).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    Sampled,
    Zero,
}

/// `f(x) = sgn(x) * sqrt(|x|)`, the factorized-noise squashing function.
pub fn signed_sqrt(x: f64) -> f64 {
    x.signum() * x.abs().sqrt()
}

fn uniform_init(dim_in: usize, rng: &mut impl Rng) -> impl FnMut() -> f64 + '_ {
    let bound = 1.0 / (dim_in as f64).sqrt();
    move || rng.random_range(-bound..bound)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

/// Parameter gradients of a dense layer, accumulated over a batch.
#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl DenseLayer {
    pub fn new(out_dim: usize, in_dim: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let mut draw = uniform_init(in_dim, rng);
        let weights = (0..out_dim * in_dim).map(|_| draw()).collect();
        let biases = (0..out_dim).map(|_| draw()).collect();
        Self {
            out_dim,
            in_dim,
            weights,
            biases,
            activation,
        }
    }

    /// Computes pre-activations into `pre` and activations into `out`.
    pub fn forward(&self, input: &[f64], pre: &mut Vec<f64>, out: &mut Vec<f64>) {
        pre.clear();
        out.clear();
        for i in 0..self.out_dim {
            let row = &self.weights[i * self.in_dim..(i + 1) * self.in_dim];
            let z = self.biases[i] + dot(row, input);
            pre.push(z);
            out.push(self.activation.apply(z));
        }
    }

    /// Accumulates parameter gradients for one sample and writes the
    /// gradient w.r.t. the input into `d_input`.
    pub fn backward(
        &self,
        input: &[f64],
        pre: &[f64],
        d_out: &[f64],
        grads: &mut DenseGrads,
        d_input: &mut [f64],
    ) {
        d_input.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.out_dim {
            let dz = d_out[i] * self.activation.derivative(pre[i]);
            if dz == 0.0 {
                continue;
            }
            grads.biases[i] += dz;
            let w_row = &self.weights[i * self.in_dim..(i + 1) * self.in_dim];
            let g_row = &mut grads.weights[i * self.in_dim..(i + 1) * self.in_dim];
            for j in 0..self.in_dim {
                g_row[j] += dz * input[j];
                d_input[j] += dz * w_row[j];
            }
        }
    }

    pub fn zero_grads(&self) -> DenseGrads {
        DenseGrads {
            weights: vec![0.0; self.weights.len()],
            biases: vec![0.0; self.biases.len()],
        }
    }

    pub fn apply_step(&mut self, grads: &DenseGrads, scale: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            *w -= scale * g;
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            *b -= scale * g;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyLayer {
    pub out_dim: usize,
    pub in_dim: usize,
    pub mu_w: Vec<f64>,
    pub sigma_w: Vec<f64>,
    pub mu_b: Vec<f64>,
    pub sigma_b: Vec<f64>,
    /// `f(eps_in_j)` of the current draw; zeros before the first resample.
    pub f_eps_in: Vec<f64>,
    /// `f(eps_out_i)` of the current draw.
    pub f_eps_out: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct NoisyGrads {
    pub mu_w: Vec<f64>,
    pub sigma_w: Vec<f64>,
    pub mu_b: Vec<f64>,
    pub sigma_b: Vec<f64>,
}

impl NoisyLayer {
    /// `sigma_init` is the noise-scale constant: sigma parameters start at
    /// `sigma_init / sqrt(in_dim)`, mu parameters uniform in
    /// `[-1/sqrt(in_dim), 1/sqrt(in_dim)]`.
    pub fn new(
        out_dim: usize,
        in_dim: usize,
        sigma_init: f64,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let mut draw = uniform_init(in_dim, rng);
        let mu_w = (0..out_dim * in_dim).map(|_| draw()).collect();
        let mu_b = (0..out_dim).map(|_| draw()).collect();
        let sigma0 = sigma_init / (in_dim as f64).sqrt();
        Self {
            out_dim,
            in_dim,
            mu_w,
            sigma_w: vec![sigma0; out_dim * in_dim],
            mu_b,
            sigma_b: vec![sigma0; out_dim],
            f_eps_in: vec![0.0; in_dim],
            f_eps_out: vec![0.0; out_dim],
            activation,
        }
    }

    /// Draws fresh factorized standard-normal noise.
    pub fn resample(&mut self, rng: &mut impl Rng) {
        for e in &mut self.f_eps_in {
            *e = signed_sqrt(rng.sample(StandardNormal));
        }
        for e in &mut self.f_eps_out {
            *e = signed_sqrt(rng.sample(StandardNormal));
        }
    }

    pub fn forward(&self, input: &[f64], mode: NoiseMode, pre: &mut Vec<f64>, out: &mut Vec<f64>) {
        pre.clear();
        out.clear();
        match mode {
            NoiseMode::Zero => {
                for i in 0..self.out_dim {
                    let row = &self.mu_w[i * self.in_dim..(i + 1) * self.in_dim];
                    let z = self.mu_b[i] + dot(row, input);
                    pre.push(z);
                    out.push(self.activation.apply(z));
                }
            }
            NoiseMode::Sampled => {
                // y_i = mu_w x + mu_b + f_out_i * (sigma_w (f_in . x) + sigma_b_i)
                let scaled: Vec<f64> = input
                    .iter()
                    .zip(&self.f_eps_in)
                    .map(|(x, f)| x * f)
                    .collect();
                for i in 0..self.out_dim {
                    let mu_row = &self.mu_w[i * self.in_dim..(i + 1) * self.in_dim];
                    let sigma_row = &self.sigma_w[i * self.in_dim..(i + 1) * self.in_dim];
                    let z = self.mu_b[i]
                        + dot(mu_row, input)
                        + self.f_eps_out[i] * (dot(sigma_row, &scaled) + self.sigma_b[i]);
                    pre.push(z);
                    out.push(self.activation.apply(z));
                }
            }
        }
    }

    /// Backward with the noise draw held fixed (the same draw the forward
    /// pass used).
    pub fn backward(
        &self,
        input: &[f64],
        pre: &[f64],
        d_out: &[f64],
        mode: NoiseMode,
        grads: &mut NoisyGrads,
        d_input: &mut [f64],
    ) {
        d_input.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.out_dim {
            let dz = d_out[i] * self.activation.derivative(pre[i]);
            if dz == 0.0 {
                continue;
            }
            let f_out = match mode {
                NoiseMode::Sampled => self.f_eps_out[i],
                NoiseMode::Zero => 0.0,
            };
            grads.mu_b[i] += dz;
            grads.sigma_b[i] += dz * f_out;
            let mu_row = &self.mu_w[i * self.in_dim..(i + 1) * self.in_dim];
            let sigma_row = &self.sigma_w[i * self.in_dim..(i + 1) * self.in_dim];
            let gmu_row = &mut grads.mu_w[i * self.in_dim..(i + 1) * self.in_dim];
            let gsigma_row = &mut grads.sigma_w[i * self.in_dim..(i + 1) * self.in_dim];
            for j in 0..self.in_dim {
                let eps_ij = f_out * self.f_eps_in[j];
                gmu_row[j] += dz * input[j];
                gsigma_row[j] += dz * eps_ij * input[j];
                d_input[j] += dz * (mu_row[j] + sigma_row[j] * eps_ij);
            }
        }
    }

    pub fn zero_grads(&self) -> NoisyGrads {
        NoisyGrads {
            mu_w: vec![0.0; self.mu_w.len()],
            sigma_w: vec![0.0; self.sigma_w.len()],
            mu_b: vec![0.0; self.mu_b.len()],
            sigma_b: vec![0.0; self.sigma_b.len()],
        }
    }

    pub fn apply_step(&mut self, grads: &NoisyGrads, scale: f64) {
        for (p, g) in self.mu_w.iter_mut().zip(&grads.mu_w) {
            *p -= scale * g;
        }
        for (p, g) in self.sigma_w.iter_mut().zip(&grads.sigma_w) {
            *p -= scale * g;
        }
        for (p, g) in self.mu_b.iter_mut().zip(&grads.mu_b) {
            *p -= scale * g;
        }
        for (p, g) in self.sigma_b.iter_mut().zip(&grads.sigma_b) {
            *p -= scale * g;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
