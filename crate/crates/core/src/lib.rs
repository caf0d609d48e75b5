//! Synthesis of compact feed-forward networks by connection growth, neuron
//! growth and magnitude pruning over a general DAG wiring, with optional
//! dimensionality reduction of the dataset and inference energy estimates.

pub mod checkpoint;
pub mod data;
pub mod dimreduce;
pub mod energy;
pub mod error;
pub mod network;
pub mod numerics;
pub mod ops;
pub mod pipeline;
pub mod schemes;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use network::{Activation, ForwardTrace, Gradients, NetworkTopology};
pub use numerics::{Matrix, RandomSource};
