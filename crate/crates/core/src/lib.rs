//! Object-goal navigation on procedurally generated indoor worlds.
//!
//! The agent builds a top-down semantic map from a planar ray scanner, a dense
//! predictor estimates where unseen instances of the target category are
//! likely to be, and a fast-marching planner walks toward the cell that best
//! trades predicted probability against geodesic distance.

pub mod error;
pub mod grid;
pub mod harness;
pub mod mapping;
pub mod planning;
pub mod predictor;
pub mod world;

pub use error::{Error, Result};

/// Independent 64-bit seed for substream `stream` of `base` (SplitMix64).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
