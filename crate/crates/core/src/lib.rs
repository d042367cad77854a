pub mod diagnostics;
pub mod error;
pub mod evolution;
pub mod fixed_point;
pub mod grid;
pub mod linalg;
pub mod model;
pub mod particle;
pub mod steady;
pub mod verify;

pub use error::{Error, Result};
