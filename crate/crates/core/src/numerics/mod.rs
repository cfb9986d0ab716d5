//! Tensors, reverse-mode differentiation and the differentiable operators the
//! network is assembled from.

pub mod gradcheck;
pub mod ops;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_coords};
pub use ops::attention::{attention_weights, softmax_rows, AttentionParams};
pub use ops::conv::Conv2dSpec;
pub use scalar::{DType, Scalar};
pub use tape::{GradCtx, GradFn, Gradients, Tape, Var};
pub use tensor::Tensor;
