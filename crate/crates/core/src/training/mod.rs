//! Optimization: Adam, the learning-rate schedule and the training loop.

pub mod adam;
pub mod config;
pub mod schedule;
pub mod trainer;

pub use adam::{clip_global_norm, global_norm, Adam, AdamParams};
pub use config::{Task, TrainConfig};
pub use schedule::{lr_at, lr_with_halvings, plateau_events, PlateauTracker};
pub use trainer::{chunk_examples, example_loss, example_mode, TrainReport, TrainState, Trainer};
