//! Core library for Tucker-decomposed convolution: tensor algebra and the
//! Tucker-2 factorization, reference and tiled convolution engines, the
//! analytical latency model with tiling search, hardware-aware rank
//! selection, and a small training loop that compresses while it trains.

pub mod admm;
pub mod conv;
pub mod error;
pub mod io;
pub mod perf;
pub mod rank;
pub mod svd;
pub mod tensor;
pub mod tiling;
pub mod tucker;

pub use error::{Error, Result};
