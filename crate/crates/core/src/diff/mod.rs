//! Dense tensors and reverse-mode gradients.

pub mod gradcheck;
pub mod init;
pub mod params;
pub mod sparse;
pub mod tape;
pub mod tensor;

pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport, ParamCheck};
pub use params::{Param, ParamId, ParamStore};
pub use sparse::Csr;
pub use tape::{sigmoid, softplus, Activation, Gradients, Mode, Tape, TapeEntry, Var, BCE_EPS};
pub use tensor::Tensor;
