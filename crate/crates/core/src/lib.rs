//! Cross-domain collaborative filtering with a shared multilayer perceptron,
//! per-domain decoupled heads and adaptive gradient-norm balancing of the
//! per-domain ranking losses.

pub mod balancer;
pub mod dataset;
pub mod factorization;
pub mod loss;
pub mod metrics;
pub mod network;
mod persist;
pub mod rng;
pub mod synthetic;
pub mod trainer;
