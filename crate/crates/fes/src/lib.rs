//! Point-supervised facial expression spotting: synthetic data generation,
//! Gaussian instance-adaptive pseudo-labeling, a two-branch frame scorer
//! trained with hand-derived gradients, proposal inference, and evaluation.

pub mod config;
pub mod error;
pub mod eval;
pub mod gim;
pub mod inference;
pub mod io;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod trainer;
pub mod types;

pub use config::RunConfig;
pub use error::FesError;
