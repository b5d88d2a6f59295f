pub mod error;
pub mod seed;
pub mod device;
pub mod frontend;
pub mod recognizer;
pub mod fade;
pub mod darf;
pub mod signal;
pub mod bench;

pub use error::{Error, Result};
