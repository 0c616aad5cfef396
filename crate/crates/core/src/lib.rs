pub mod alignment;
pub mod descriptor;
pub mod error;
pub mod feature_maps;
pub mod kernel_lab;
pub mod retrieval;
#[cfg(feature = "server")]
pub mod service;

pub use error::{AfmError, Result};
