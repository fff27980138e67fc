//! Numerical substrate: dense matrices, MLPs with batch norm, losses, Adam,
//! seeded randomness and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod matrix;
pub mod mlp;
pub mod rng;

pub use adam::{AdamConfig, AdamState, Direction};
pub use checkpoint::NetworkCheckpoint;
pub use loss::{
    binary_log_terms, probability_cross_entropy, softmax, softmax_backward, softmax_cross_entropy,
};
pub use matrix::DenseMatrix;
pub use mlp::{
    sigmoid, Activation, BatchNorm, ForwardCache, Gradients, Layer, LayerGradients, LayerShape,
    Mode, NetworkParams,
};
pub use rng::{derive_seed, Rng};
