//! Configuration-driven training, evaluation, prediction and ablation.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod evaluate;
pub mod predict;
pub mod train;

pub use ablate::{ablate, AblationReport, AblationVariant};
pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use evaluate::{evaluate, EvalSettings, ModelPredictor, OraclePredictor, StereoPredictor};
pub use predict::predict_files;
pub use train::{restore_model, Trainer};
