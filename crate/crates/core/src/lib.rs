//! Quantization fairness lab.
//!
//! Trains small grouped classifiers, quantizes their weights (post-training
//! or quantization-aware), and measures how the damage is distributed across
//! groups: weight drift and sparsity, logit drift, softened probabilities,
//! group loss and accuracy, group gradient norms and the top Hessian
//! eigenvalue. Mitigation combines resampling, a per-group weighted loss and
//! mixed-precision QAT.

pub mod audit;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod par;
pub mod quant;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use nn::{ClassWeights, Network};
pub use par::Exec;
pub use rng::Rng;
pub use tensor::Tensor;
