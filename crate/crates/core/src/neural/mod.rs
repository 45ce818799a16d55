//! Multilayer perceptrons with reverse-mode gradients, the Adam optimizer and
//! a reduce-on-plateau learning-rate scheduler. 64-bit floats throughout.

mod adam;
mod mlp;
mod scheduler;

pub use adam::{AdamConfig, AdamState};
pub use mlp::{init_mlp, Activation, Architecture, ForwardCache, Mlp, MlpCheckpoint};
pub use scheduler::{PlateauConfig, PlateauScheduler};
