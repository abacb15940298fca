//! Deterministic simulator for contrastive federated learning over
//! vertically partitioned tabular data.
//!
//! Feature columns are split across clients, each client trains a local
//! autoencoder on its slice, and a coordinator averages parameters over
//! a randomly selected client subset every batch. A configurable
//! fraction of clients mounts a model-scaling attack, and the crate
//! measures which clients end up failed, how much poisoned mass reaches
//! the aggregate, and whether the selection-ratio exposure and
//! convergence bounds hold empirically.

pub mod attack;
pub mod bounds;
pub mod cli;
pub mod data;
pub mod error;
pub mod federation;
pub mod metrics;
pub mod model;
pub mod runner;
pub mod seeds;

pub use error::{Error, Result};
