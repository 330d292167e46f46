//! The segmentation network and its parameter handling.

pub mod checkpoint;
pub mod clstm;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod fusion;
mod layers;
pub mod model;
pub mod params;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use clstm::Carry;
pub use config::{DropoutRates, NetConfig, LEVELS};
pub use encoder::FeaturePyramid;
pub use model::{model_step, CarryState, IfssNet, Mode, ModelState, StepOutput};
pub use params::{ParamStore, ParamSpec};
