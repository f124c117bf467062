//! Membrane-potential distributions under synaptic versus neuronal noise.
//!
//! Synaptic noise is summed over the fan-in and Gaussianises as the fan-in grows; noise
//! on the threshold enters once and keeps its shape.

pub mod noise;
pub mod sweep;
pub mod wasserstein;

pub use noise::{sample_noise, FamilyKind, NoiseFamily};
pub use sweep::{
    fan_in_sweep, histogram, membrane_samples, InjectionMode, MembraneExperiment, SweepCell, SweepSettings, HIST_RANGE, SWEEP_HEADER,
};
pub use wasserstein::{standardize, wasserstein1};
