//! Distributed capacity regions, finite-blocklength error bounds and a
//! threshold-decoder simulator for distributed multiple-access channels.

pub mod channel;
pub mod cli;
pub mod code_space;
pub mod error;
pub mod exponents;
pub mod gep;
pub mod infotheory;
mod optimize;
pub mod simulator;

pub use error::{Error, Result};
