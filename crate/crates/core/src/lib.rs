//! Pseudo-Zernike moment features and sparse-representation classification
//! of radar target images.

pub mod classify;
pub mod dictionary;
pub mod error;
pub mod imaging;
mod io;
pub mod moments;
pub mod pipeline;
pub mod sparse;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
