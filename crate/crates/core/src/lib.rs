//! Spatio-temporally varying coefficient regression with Moran eigenvector
//! bases, profiled marginal likelihood and reluctant interaction selection.

pub mod basis;
pub mod design;
pub mod error;
pub mod likelihood;
pub mod linalg;
pub mod optimize;
pub mod schur;
pub mod select;
pub mod synth;
pub mod io_cli;

pub use error::{Result, StvcError};
