//! Dense matrices and the reverse-mode tape every model is built on.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_many};
pub use tape::{Gradients, SparseRows, Tape, Var};
pub use tensor::{Activation, Tensor};

pub use tape::sym_normalize_value;
