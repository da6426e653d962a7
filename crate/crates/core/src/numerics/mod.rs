//! Dense `f64` tensors, a reverse-mode tape, and finite-difference checks.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{
    gradcheck, gradcheck_with, relative_error, GradCheckReport, DEFAULT_STEP, DEFAULT_TOLERANCE,
};
pub use tape::{sigmoid, softmax_rows_raw, stack_rows, Gradients, Tape, Var};
pub use tensor::Tensor;
