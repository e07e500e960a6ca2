//! Quantile-optimal individualized decision rules from right-censored
//! survival data.
//!
//! The library estimates static (one-stage) and dynamic (two-stage) linear
//! index decision rules that maximize the marginal τ-quantile of the
//! potential survival time, using inverse-probability-of-censoring-weighted
//! quantile estimation and derivative-free evolutionary policy search.
//! Smoothed resampling inference and a simulation subsystem for Monte Carlo
//! studies are included.

pub mod dataio;
pub mod dynamic;
pub mod error;
pub mod inference;
pub mod policy;
pub mod search;
pub mod simgen;
pub mod survival;
pub mod value;

pub use error::{Error, Result};

/// Derive a child seed from a master seed and a stream index.
///
/// Splitmix64 finalizer applied to `master + stream * golden_gamma`; used
/// everywhere a task needs an independent deterministic random stream.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master.wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
