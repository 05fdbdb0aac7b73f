//! Training, evaluation, verification, and persistence around the core
//! learning modules.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod train;
pub mod verify;

pub use checkpoint::ModelCheckpoint;
pub use config::TrainConfig;
pub use metrics::{MetricsLog, MetricsRow};
pub use model::Model;
