//! High-throughput environment vectorization: lossless flattening of nested
//! observation/action structures into packed flat buffers, plus simulation
//! of many environments across parallel workers over shared memory with
//! synchronous, asynchronous-pooled, and zero-copy batching modes.

pub mod autotune;
pub mod bench;
pub mod emulation;
pub mod env;
pub mod error;
pub mod ocean;
pub mod space;
pub mod synth;
pub mod vector;

pub use error::{Error, Result};
