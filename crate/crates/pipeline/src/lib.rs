pub mod compose;
pub mod dump;
pub mod error;
pub mod matrix;
pub mod reference;

pub use compose::{decode_dataset, decode_dataset_with, oracle_plans, run_pipeline, run_stage2, Generated, PipelineOutput};
pub use error::{PipelineError, Result};
pub use matrix::{run_matrix, train_task, ExperimentMatrixConfig, MatrixOutcome, MatrixRow, Preset, ScoreRow, ScoreTable, TrainOverride};
