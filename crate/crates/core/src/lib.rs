//! Spiking Bayesian neural networks.
//!
//! Neurons fire when their input drive crosses a random threshold drawn from a learned
//! Gaussian posterior. Training propagates firing probabilities in closed form
//! ([`rate`], [`network`], [`train`]); deployment runs time-stepped stochastic spiking
//! ([`spiking`]) either with sampled thresholds or through a calibrated magnetic tunnel
//! junction model ([`device`]).
//!
//! All numerical code is generic over [`Scalar`]; the aliases below fix the precision.

pub mod data;
pub mod device;
pub mod distlab;
pub mod error;
pub mod eval;
pub mod network;
pub mod rate;
pub mod rng;
pub mod scalar;
pub mod special;
pub mod spiking;
pub mod synapse;
pub mod threshold;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use network::{InferenceNet, Network, NetworkConfig};
pub use rng::SeedTree;
pub use scalar::Scalar;

pub type Network32 = network::Network<f32>;
pub type Network64 = network::Network<f64>;
pub type InferenceNet32 = network::InferenceNet<f32>;
pub type InferenceNet64 = network::InferenceNet<f64>;
pub type LabeledSet32 = data::LabeledSet<f32>;
pub type LabeledSet64 = data::LabeledSet<f64>;
