// Numeric kernels index several parallel arrays by the same spinor or axis index.
#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod criteria;
pub mod embedding;
pub mod error;
mod fft;
pub mod lattice;
pub mod potential;
pub mod linalg;
pub mod symbol_analysis;
pub mod symbols;

pub use error::{DiracError, Result};
pub use linalg::SymbolMatrix;
pub use symbols::{Dimension, ModelId, ModelKind};
