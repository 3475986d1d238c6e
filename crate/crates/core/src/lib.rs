pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod metrics;
pub mod nn;
pub mod objectives;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
