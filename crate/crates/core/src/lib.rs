//! Personalized federated learning with mean-field Gaussian Bayesian neural
//! networks.
//!
//! The crate simulates a cloud server and a set of clients holding non-i.i.d.
//! data shards. Each client trains a personalized Bayesian neural network by
//! balancing its data fit against the KL divergence to a shared global
//! distribution, and the server aggregates damped averages of the locally
//! updated global copies. A FedAvg baseline over the same deterministic
//! architecture, non-i.i.d. data generators, and evaluation metrics
//! (accuracy, predictive entropy, Hellinger generalization error) round out
//! the simulator.
//!
//! Everything is seeded: identical seeds yield bit-identical runs regardless
//! of how many worker threads execute the per-client updates.

pub mod baselines;
pub mod bnn;
pub mod data;
pub mod error;
pub mod federation;
pub mod metrics;
pub mod tensor;

pub use error::{Error, Result};
