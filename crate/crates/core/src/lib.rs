#[cfg(feature = "openblas")]
extern crate blas_src;

pub mod autodiff;
pub mod data_io;
pub mod error;
pub mod hin;
pub mod model;
pub mod objectives;
pub mod training;

pub use error::{Error, ErrorCategory, Result};
