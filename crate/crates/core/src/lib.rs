//! Address hopping, trapdoor puzzles, the filtering/fair-queueing dataplane,
//! and the closed-form attack calculators.

mod hex_serde;

pub mod analysis;
pub mod hop;
pub mod puzzle;
pub mod router;
pub mod topology;

pub use hex_serde::parse_u128;
