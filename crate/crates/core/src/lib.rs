pub mod cli;
pub mod error;
pub mod exec;
pub mod graphgen;
pub mod model;
pub mod preprocess;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
