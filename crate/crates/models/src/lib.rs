//! Recurrent attention encoder-decoders for text, frame and fused inputs,
//! trained with a small reverse-mode tape.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod tape;
pub mod train;
pub mod vocab;

pub use checkpoint::Checkpoint;
pub use config::{FusionConfig, ModelConfig, ModelKind, TrainConfig, TransducerConfig, VisionConfig};
pub use error::{ModelError, Result};
pub use model::{count_parameters, DecodeMode, Encoded, Seq2Seq, Source};
pub use vocab::Vocab;
pub use train::{train, History};
