//! Amortised adaptive testing for the Rasch model.
//!
//! A policy network is trained by PPO on simulated students to choose item
//! difficulties and estimate ability from the responses so far. At
//! deployment, requested difficulties are mapped onto a bank of items
//! calibrated by maximum likelihood.

pub mod bench;
pub mod calibration;
pub mod env;
pub mod error;
pub mod io;
pub mod irt;
pub mod nnet;
pub mod ppo;
pub mod rng;

pub use error::{Error, Result};
