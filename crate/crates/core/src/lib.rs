//! Split training of convolutional classifiers between an edge worker and a
//! cloud worker, with an early exit on the edge, a quantized uplink, a
//! training-runtime cost model and a split-point planner.

pub mod autodiff;
pub mod clock;
pub mod config;
pub mod costmodel;
pub mod data;
pub mod fsutil;
pub mod model;
pub mod netsim;
pub mod orchestrator;
pub mod planner;
pub mod quant;
pub mod wire;
pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Precision, Real, Tensor};
