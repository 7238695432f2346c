//! Small reverse-mode differentiation kernel and the Q-network built on it.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod params;
pub mod qnet;
pub mod tape;
pub mod tensor;

pub use error::{KernelError, Result};
pub use optim::{Optimizer, OptimizerConfig};
pub use params::ParamSet;
pub use qnet::{NetworkSpec, QNetwork, TokenGroup, Variant};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
