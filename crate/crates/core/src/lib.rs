pub mod data;
pub mod error;
pub mod harness;
pub mod idx;
pub mod learners;
pub mod memory;
pub mod nn;
pub mod streams;
pub mod theory;

pub use error::{Error, Result};
