//! Bidirectional LSTM variational autoencoder.
//!
//! Encoder: two bidirectional LSTM layers; the final forward state and the
//! final backward state of layer two are concatenated and mapped by two
//! affine heads to the mean and log-variance of a 2-D Gaussian posterior.
//! Decoder: the sampled latent point is projected and injected at every
//! timestep of a mirrored two-layer bidirectional LSTM, followed by an
//! affine output head per timestep.
//!
//! Loss is mean squared reconstruction error plus a weighted KL divergence
//! to the standard normal prior. All gradients are analytic
//! backpropagation through time, arbitrated by the finite-difference
//! checker in `numgrad`.

mod backward;
mod forward;
mod params;
mod verify;

pub use backward::model_backward;
pub use forward::{
    decode, encode, kl_divergence, loss, lstm_cell, lstm_unroll, reparameterize, Direction,
    LossTerms,
};
pub use params::{
    Affine, BiLstmLayerParams, LstmDirectionParams, ModelDims, ModelParams, LATENT_DIM,
};
pub use verify::{gradient_check_suite, GradCheckReport, SeedCheck};

pub(crate) use forward::forward_full;

/// One encoded window in the two dimensional latent space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentPoint {
    pub z1: f64,
    pub z2: f64,
}

impl LatentPoint {
    pub fn new(z1: f64, z2: f64) -> Self {
        LatentPoint { z1, z2 }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.z1, self.z2]
    }

    pub fn is_finite(&self) -> bool {
        self.z1.is_finite() && self.z2.is_finite()
    }
}
