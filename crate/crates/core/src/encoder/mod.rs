//! Desk-scale self-supervised training harness.

pub mod augment;
pub mod data;
pub mod model;
pub mod tape;
pub mod train;

pub use model::{ema_update, EncoderParams, TOPOLOGY};
pub use train::{train, TrainConfig, TrainOutcome};
