//! Differentiable shift-variant filtered backprojection for cone-beam CT on
//! arbitrary source trajectories, with a PCA-compressed redundancy layer.

pub mod cli;
pub mod data;
pub mod error;
pub mod geometry;
pub mod operators;
pub mod pca;
pub mod pipeline;
pub mod redundancy;
pub mod training;

pub use error::{Error, Result};
