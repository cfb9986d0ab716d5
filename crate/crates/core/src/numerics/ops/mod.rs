//! Differentiable operations, each implemented as a method on [`Tape`].
//!
//! [`Tape`]: crate::numerics::Tape

pub mod attention;
pub mod conv;
pub mod elementwise;
pub mod linear;
pub mod norm;
pub mod shape;
