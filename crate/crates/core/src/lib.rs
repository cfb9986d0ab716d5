//! Universal speech enhancement and separation: a dual-path transformer
//! mask-free network over complex STFTs, with the numerics, signal processing,
//! losses, data simulation and training loop it needs.

pub mod dsp;
pub mod datasim;
pub mod error;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{ErrorClass, Result, UsesError};
pub use numerics::{DType, Scalar, Tape, Tensor, Var};
