pub mod error;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod labels;
pub mod metrics;
pub mod predictor;
pub mod salsa;
pub mod scene;

pub use error::{Error, ErrorKind, Result};
