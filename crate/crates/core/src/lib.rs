//! Functional and cycle-level models of three convolution engines: a
//! bit-parallel baseline, a precision-serial engine, and an engine that
//! processes only the essential (non-zero) bits of each neuron.

pub mod analysis;
pub mod cli;
pub mod encoding;
pub mod error;
pub mod geometry;
pub mod numerics;
pub mod pragmatic;
pub mod reference;
pub mod stripes;

pub use error::{Error, Result};
