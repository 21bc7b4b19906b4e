//! Federated learning simulation with client unlearning.
//!
//! The crate trains a multilayer perceptron across simulated clients with
//! FedAvg, optionally backdooring one target client, and then removes that
//! client's contribution by one of four methods: subspace-projected
//! gradient ascent (`sfu`), norm-clipped gradient ascent (`ga`), historical
//! update subtraction (`ul`), or retraining from scratch (`retrain`).
//! Evaluation covers clean accuracy, backdoor attack success rate, and the
//! post-removal loss change on the remaining clients.

pub mod data;
pub mod error;
pub mod eval;
pub mod fl;
pub mod linalg;
pub mod nn;
pub mod seed;
pub mod unlearn;

pub use error::{Error, Result};
