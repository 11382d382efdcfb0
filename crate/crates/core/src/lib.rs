//! Semantic manipulation localization: frequency prompts for a frozen encoder,
//! interleaved mask/edge sequence reasoning, training objectives, evaluation,
//! dataset synthesis, and the run-level drivers behind the `smloc` binary.

pub mod app;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod init;
pub mod model;
pub mod objectives;
pub mod reasoner;
pub mod registry;
pub mod spectral;

pub use error::{Error, Result};
