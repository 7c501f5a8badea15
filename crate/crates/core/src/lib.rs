pub mod error;
pub mod real;
pub mod tensor;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::{Image, Tensor};
pub mod gradcheck;
pub mod kpnet;
pub mod parallel;
pub mod pipeline;
pub mod sepconv;
pub mod training;
