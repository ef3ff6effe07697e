//! CrossFusion: multi-scale cross-attention fusion of patch-embedding bags
//! for discrete-time survival prediction, with the training, evaluation
//! and reporting harness around it.

pub mod cli;
pub mod data;
pub mod error;
pub mod gradsuite;
pub mod model;
pub mod nn;
pub mod report;
pub mod survival;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
