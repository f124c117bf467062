//! Rate-domain training: loss, optimiser, schedule and the epoch loop.

pub mod config;
pub mod fit;
pub mod loss;
pub mod optim;
pub mod schedule;

pub use config::TrainConfig;
pub use fit::{fit, FitOutcome};
pub use loss::{softmax_cross_entropy, total_loss};
pub use optim::{AdamHyper, AdamMoments, AdamW, OptimizerState};
pub use schedule::cosine_lr;
