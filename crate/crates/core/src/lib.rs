//! Downlink simulation and large-scale fading precoding (LSFP) optimization for
//! multi-cell massive MIMO with impaired hardware.
//!
//! The crate is organised bottom-up:
//!
//! - [`scenario`]: network geometry, pathloss, Rician factors and second-order
//!   channel statistics.
//! - [`hardware`]: Lloyd-Max quantizers, Bussgang gains and the per-antenna
//!   converter/RF impairment profile.
//! - [`channels`]: channel realizations drawn from the statistics.
//! - [`estimation`]: impaired uplink pilot phase and phase-unaware LMMSE
//!   estimation.
//! - [`precoding`]: MR, distortion-unaware MMSE and distortion-aware MMSE
//!   local precoders.
//! - [`performance`]: Monte-Carlo estimation of the hardening-bound SINR terms,
//!   closed-form SINR / sum-SE and a direct downlink simulation oracle.
//! - [`optimizer`]: minorization-maximization over the LSFP coefficients.
//! - [`harness`]: presets, configuration files and experiment orchestration.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channels;
pub mod error;
pub mod estimation;
pub mod hardware;
pub mod harness;
pub mod linalg;
pub mod optimizer;
pub mod performance;
pub mod precoding;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};
pub use linalg::{CMat, CVec, C64};
