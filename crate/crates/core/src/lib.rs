pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod io;
pub mod linear;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod scaling;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
