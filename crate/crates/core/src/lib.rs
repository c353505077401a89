//! Data model, corpus handling, synthetic episode generation and evaluation
//! metrics for action-sequence summarization.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod synthgen;
pub mod text;
pub mod trace;

pub use error::{Error, Result};
pub use features::FeatureGrid;
pub use trace::{Annotation, Episode, Frames, GoldSlots, HighPddlStep, LowAction, TaskType};
