//! Self-supervised disentangled representation learning for output-only
//! vibration-based damage identification.

pub mod error;
pub mod signals;
pub mod synthdata;
pub mod tensor;
pub mod model;
pub mod losses;
pub mod dataset;
pub mod features;
pub mod damageid;
pub mod training;
pub mod config;
pub mod pipeline;

pub use error::{Error, ErrorKind, Result};
