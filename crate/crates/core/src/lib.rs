pub mod autograd;
pub mod cli;
pub mod descriptor;
pub mod error;
pub mod geometry;
pub mod io;
pub mod solver;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
