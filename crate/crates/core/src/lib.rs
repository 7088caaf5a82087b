pub mod checks;
pub mod cli;
pub mod ddr;
pub mod error;
pub mod instrument;
pub mod model;
pub mod nn;
pub mod projection;
pub mod sceneio;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{DType, Tensor};
