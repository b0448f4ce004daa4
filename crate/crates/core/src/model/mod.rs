//! Desk-scale non-autoregressive model: decoder, length predictor, Adam,
//! training schedules, checkpoints and decoding.

pub mod adam;
pub mod checkpoint;
pub mod decode;
pub mod nat;
pub mod train;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CheckpointHeader, FORMAT_VERSION};
pub use decode::{decode, decode_with_length, postprocess, predicted_length};
pub use nat::{copy_index, Forward, LengthPredictor, ModelDims, NatModel};
pub use train::{train, Schedule, StepRecord, TrainConfig, TrainOutcome};
