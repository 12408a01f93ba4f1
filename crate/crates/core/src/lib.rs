//! Interleaved codebook schedules for multi-stream token generation.
//!
//! A token grid with `C` codebook levels and `T` timesteps can be flattened
//! into a decoding schedule in several ways. This crate implements four of
//! them (delay, flat, stack, stack-delay), derives the KV-cache retention
//! policy each one admits, builds the attention mask that matches that
//! policy, and ships a small forward-only transformer plus a sampler so the
//! mask/cache equivalence can be checked end to end on real numbers.
//!
//! The interesting property is the one `mask` and `cache` share: for every
//! schedule, the set of positions a query may attend to equals the set of
//! cache entries still live at that step. `decoder::equivalence_report`
//! verifies this bitwise by decoding the same grid twice, once with the
//! dense mask and once through the incremental cache.

pub mod cache;
pub mod decoder;
mod error;
pub mod mask;
pub mod pattern;
pub mod rng;
pub mod sampling;

pub use error::{Error, Result};
pub use pattern::{PatternKind, PatternSpec};
