//! Self-contained feed-forward kernel for the categorical dueling
//! Q-network: dense layers, factorized-noise layers, the atom support with
//! its categorical projection, forward/backward passes, plain gradient
//! descent, and the text checkpoint format.

pub mod checkpoint;
mod layers;
mod network;

pub use layers::{Activation, DenseLayer, NoiseMode, NoisyLayer, signed_sqrt};
pub use network::{
    argmax, project_target, q_values, AtomSupport, CategoricalQNetwork, NetworkConfig,
    NeuralError, TrainSample,
};
