//! Signal extraction from raw CAN logs and driver re-identification on the
//! recovered signals.

pub mod canlog;
pub mod config;
pub mod decomposer;
pub mod error;
pub mod features;
pub mod groundtruth;
pub mod learner;
pub mod pipeline;
pub mod reid;
pub mod synthgen;
pub mod tsmatch;

pub use error::{Error, Result};
