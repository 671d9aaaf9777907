//! Learning to simulate: tune the parameters of a black-box data simulator
//! with REINFORCE so that a model trained on the simulated data does well on
//! a held-out validation set.
//!
//! The crate is organized bottom-up:
//!
//! - [`param_space`]: the unconstrained parameter vector and its decoding into
//!   probability-distribution parameters.
//! - [`policy`]: the Gaussian sampling policy and its score-function update.
//! - [`sim`]: the simulator contract, the Gaussian-mixture toy world and the
//!   block-based traffic scene model.
//! - [`mtm`]: the main task models trained on simulated data.
//! - [`orchestrator`]: the outer learning loop and the baseline protocols.
//! - [`experiments`]: named presets that bundle protocol matrices.
//! - [`config`]: the experiment configuration file format.

pub mod config;
pub mod error;
pub mod experiments;
pub mod mtm;
pub mod orchestrator;
pub mod param_space;
pub mod policy;
pub mod seed;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
