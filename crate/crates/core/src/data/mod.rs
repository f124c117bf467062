//! Dataset ingestion, spike encoding, splitting and artifact persistence.

pub mod checkpoint;
pub mod encode;
pub mod idx;
pub mod metrics;
pub mod split;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest, NamedTensor};
pub use encode::{poisson_encode, poisson_encode_into, SpikeTrain};
pub use idx::{load_idx_images, load_idx_labels, normalize, ImageSet, LabeledSet, Mnist, ProbImageSet};
pub use metrics::{CsvTable, MetricsRow, METRICS_HEADER};
pub use split::split_train_val;
