pub mod autodiff;
pub mod cca;
pub mod cli;
pub mod encoders;
pub mod error;
pub mod fewshot;
pub mod heads;
pub mod linalg;
pub mod meta;

pub use error::{Error, Result};
pub use linalg::Matrix;
