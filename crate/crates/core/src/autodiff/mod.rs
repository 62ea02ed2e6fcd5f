//! Dense tensors and reverse-mode automatic differentiation.
//!
//! Everything is `f64`. Shapes are checked on every primitive; the only
//! broadcasting is the row-wise `add_row` / `mul_row` pair.

mod tape;
mod tensor;

pub use tape::{Gradients, Nonlinearity, Tape, Var, LAYER_NORM_EPS};
pub use tensor::{log_softmax, logsumexp, softmax, Tensor};
