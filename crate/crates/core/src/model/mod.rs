//! Embedding networks with dimensional masks, reverse-mode gradients and
//! checkpointing.

pub mod checkpoint;
pub mod config;
pub mod inception;
pub mod layers;
pub mod network;
pub mod params;
pub mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{ChannelSchedule, DimensionMask, InputGeometry, ModelConfig};
pub use layers::{layer_norm, layer_norm_backward};
pub use network::{
    max_relative_gradient_error, zero_pad_freq, Model, ModelInput, ShapeLedger, Tape, Trace,
    GRADIENT_CHECK_SEED,
};
pub use params::{Gradients, ParamStore};
pub use tensor::{Map, Scalar};
