//! Randomness extraction and measure conversion on the Cantor space, with
//! exact rate verification.
//!
//! The crate covers block-map extractors (von Neumann, Peres), sampling with
//! discrete distribution generating trees, and the Levin–Kautz interval
//! conversion between computable measures. Each procedure is instrumented so
//! that output/input ratios, exact average rates and entropy-ratio limits can
//! be measured and compared with their theoretical values.

pub mod bitseq;
pub mod blockmap;
pub mod cli;
pub mod ddg;
pub mod ergodic;
pub mod error;
pub mod generators;
pub mod levinkautz;
pub mod measures;
pub mod selftest;

pub use bitseq::{BitStream, BitString, RatInterval};
pub use error::{Error, Result};
pub use measures::Measure;
