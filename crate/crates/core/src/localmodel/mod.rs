//! Neural-network ansatz for network-local models and its training loop.

pub mod adam;
pub mod block;
pub mod checkpoint;
pub mod controller;
pub mod loss;
pub mod net;
pub mod train;

pub use adam::Adam;
pub use block::ResponseBlock;
pub use checkpoint::{export_strategies, Checkpoint, StrategyGrid};
pub use controller::SamplingController;
pub use loss::{loss, LossKind};
pub use net::{Gradients, HiddenSample, LocalModelNet};
pub use train::{evaluate, fit, restart_seed, train, IterationRecord, TrainConfig, TrainResult};
