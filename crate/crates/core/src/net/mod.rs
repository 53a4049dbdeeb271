//! Teacher and student residual networks.

pub mod checkpoint;
mod config;
mod grad;
mod network;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{BlockKind, HeadSource, NetworkConfig, RescaleTarget};
pub use grad::{
    evaluate_loss, loss_and_gradients, loss_and_gradients_with_targets, Gradients, LossSpec,
    Targets,
};
pub use network::{Block, HiddenTrace, Mlp, Network};
