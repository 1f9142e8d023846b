pub mod baseline;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod hc;
pub mod lors;
pub mod marginal;
pub mod matrix_io;
pub mod secular;
pub mod simulate;
pub mod svt;

pub use error::{Error, Result};
