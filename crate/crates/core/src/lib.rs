//! Combustion dynamics mode identification from multichannel pressure
//! records.
//!
//! The crate trains a bidirectional LSTM variational autoencoder on sliding
//! windows of 16-channel pressure time series, compresses each window to a
//! two dimensional latent vector, and classifies operating cases by the
//! geometry of their latent clouds. A physics-motivated synthetic generator
//! provides labeled records for testing and demonstration.

pub mod analysis;
pub mod error;
pub mod model;
pub mod numgrad;
pub mod pipeline;
pub mod seed;
pub mod svg;
pub mod synth;

pub use error::{Error, Result};
