//! Streaming gross-error detection for sensor channels.
//!
//! A channel is identified as an ARMA/ARX plant, tracked with a Kalman
//! filter whose innovations feed a chi-squared test, and flagged samples are
//! grouped into episodes that a small decision tree labels as Bias, Drift,
//! precision degradation or Failure.

pub mod classify;
pub mod error;
pub mod ident;
pub mod io;
pub mod kalman;
pub mod pipeline;
pub mod sample;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use sample::{ErrorClass, SensorSample, TruthLabel};
