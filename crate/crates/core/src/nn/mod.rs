//! Layers, initialization, backpropagation, and the Adam optimizer.

mod adam;
mod checkpoint;
pub(crate) mod geometry;
pub mod gradcheck;
mod layers;
mod param;
mod stack;

pub use adam::{AdamConfig, AdamState, Moments};
pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use layers::{Activation, Conv, Flatten, MaxPool, Tanh, TransposedConv};
pub use param::{ensure_unique_names, init_uniform_fan_in, param_rng, Param};
pub use stack::{Layer, LayerStack};
