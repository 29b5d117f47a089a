//! Dense arrays, same-size convolution and a small reverse-mode tape.

mod conv;
mod gradcheck;
mod tape;
mod tensor;

pub use conv::{conv2d_same, conv2d_same_backward};
pub use gradcheck::{central_differences, finite_diff_check, relative_error};
pub use tape::{sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;
