pub mod autodiff;
pub mod checkpoint;
pub mod codec;
pub mod entropy;
pub mod error;
pub mod eval;
pub mod task;
pub mod shapes;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
