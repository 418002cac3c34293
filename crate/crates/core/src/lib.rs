pub mod bloch;
pub mod dictionary;
pub mod error;
pub mod harness;
pub mod image;
pub mod phantom;
pub mod recon;
pub mod rng;
pub mod sampling;

pub use error::{Error, Result};
