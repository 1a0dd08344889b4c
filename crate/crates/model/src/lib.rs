//! Encoder-decoder transformer that turns beat-aligned spectrograms into
//! chart tokens, with training, fine-tuning and grammar-constrained decoding.

pub mod config;
pub mod data;
pub mod error;
pub mod generate;
pub mod gradcheck;
pub mod io;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;

pub use config::{ModelConfig, TrainConfig};
pub use error::ModelError;
pub use io::Checkpoint;
pub use model::Model;
pub use train::{EpochLog, TrainLog, TrainSample};
