//! Joint disparity estimation and semantic segmentation from rectified
//! stereo pairs.
//!
//! The network ([`model::SemStereoNet`]) shares one feature extractor across
//! both views, stacks the features into a cost volume whose first disparity
//! slot carries semantics, refines it over three fusion rounds and decodes
//! every round into a full-resolution disparity map and class logits.

pub mod cost_volume;
pub mod data;
pub mod dcsfem;
pub mod error;
pub mod harness;
pub mod heads;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod mfm;
pub mod model;
pub mod sfm;

pub use error::{Error, Result};
pub use model::{ModelConfig, Prediction, SemStereoNet};
