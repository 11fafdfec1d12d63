//! Global-local single-image super-resolution, end to end on the CPU.
//!
//! The crate builds up from a minimal rank-4 tensor engine with reverse-mode
//! differentiation ([`tensor`]), through the network blocks ([`nn`]), the
//! spatial+frequency loss ([`signal`]), Y-channel quality metrics
//! ([`metrics`]), complexity accounting ([`complexity`]), a deterministic
//! trainer ([`trainer`]), and bit-exact image/checkpoint I/O ([`io`]).
//!
//! Every numeric path is single-threaded with fixed reduction order, so a
//! training run repeats bitwise given the same seed.

pub mod cli;
pub mod complexity;
pub mod error;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod signal;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
