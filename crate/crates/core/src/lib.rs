//! Neural and iterative precoding for multi-user MISO downlinks.
//!
//! The crate is organized bottom-up:
//!
//! - [`complex`]: complex vectors/matrices, Rayleigh channels, SINR and rate formulas.
//! - [`wmmse`]: the weighted MMSE solver for weighted sum-rate maximization.
//! - [`cps`]: canonical complex projective space representatives and complex
//!   hyperspherical coordinates.
//! - [`param`]: the four feature/label codecs and their differentiable decoders.
//! - [`nn`]: a small feed-forward network with batch norm, PReLU and Adam.
//! - [`losses`]: power-split, direction and angle losses with rate-penalty weighting.
//! - [`data`]: dataset generation, splitting and the binary dataset format.
//! - [`eval`]: training orchestration, accuracy, SNR sweeps and latency benchmarks.

// `!(x > 0.0)` guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod complex;
pub mod cps;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod nn;
pub mod param;
pub mod rng;
pub mod wmmse;

pub use complex::{CMat, CVec, SystemConfig, C64};
pub use error::{Error, Result};
pub use param::ParamKind;
