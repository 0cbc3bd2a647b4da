//! Learned programmatic representations: features written as source text,
//! proposed by a language model, and decision trees or forests over them.

pub mod chess;
pub mod data;
pub mod exec;
pub mod feature;
pub mod fixtures;
pub mod matrix;
pub mod tree;
pub mod proposer;
pub mod f2;
mod train;
pub use train::{TrainError, TrainOptions};
pub mod did3;
pub mod explain;
pub mod app;
