//! Single-process simulator for federated training of spiking and
//! conventional neural networks, with deterministic seeded execution and a
//! closed-form inference-energy estimator.

pub mod ann;
pub mod datasets;
pub mod energy;
pub mod error;
pub mod federation;
pub mod layers;
pub mod models;
pub mod rng;
pub mod snn;
pub mod spiking;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
