pub mod environment;
pub mod error;
pub mod expansion;
pub mod green;
pub mod kalikow;
pub mod kernel;
pub mod lattice;
pub mod linalg;
pub mod network;
pub mod rng;
pub mod speedsim;
pub mod stats;
pub mod traps;

pub use error::{Error, Result};
