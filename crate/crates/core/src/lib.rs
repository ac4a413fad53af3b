//! Simulator for federated training of a JSCC image autoencoder in which some
//! clients upload sparsified model updates and others upload encoder features
//! that the server uses for feature-reconstruction training.

pub mod cli;
pub mod compression;
pub mod config;
pub mod data;
pub mod error;
pub mod federation;
pub mod jscc;
pub mod metrics;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
