//! Reverse-mode automatic differentiation for small convolutional networks.

pub mod kernels;
mod params;
mod tape;

pub use params::{
    adam_step, cosine_annealing_lr, sgd_step, Buffer, BufferId, Optimizer, ParamId, ParamStore, Parameter,
};
pub use tape::{BatchStats, Tape, Var};
