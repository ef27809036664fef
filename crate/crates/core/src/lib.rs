pub mod data;
pub mod distributions;
pub mod error;
pub mod harness;
pub mod mlp;
pub mod schedule;
pub mod search;
pub mod seeds;
pub mod special;
pub mod surrogate;
pub mod trainer;

pub use error::{Error, Result};
