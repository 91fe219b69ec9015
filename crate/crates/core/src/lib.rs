//! Goal-driven perception on noisy MNIST digit pairs.
//!
//! The crate has three layers:
//!
//! - a two-head dense classifier over side-by-side noisy digit pairs
//!   ([`net`], fed by [`data`], numerics in [`tensor`]);
//! - contrastive excitation backprop, which turns a trained classifier and
//!   a goal (even / odd / low / high) into a pixel attention map and a
//!   goal-conditioned prediction ([`attention`]);
//! - an acetylcholine/norepinephrine-style neuromodulation loop that has to
//!   discover a hidden, probabilistically rewarded goal online and detect
//!   when it switches ([`neuromod`]).
//!
//! All randomness flows from a master seed through named sub-streams
//! ([`rng`]), so every pipeline stage is reproducible in isolation.

pub mod attention;
pub mod data;
pub mod error;
pub mod net;
pub mod neuromod;
pub mod rng;
pub mod selftest;
pub mod tensor;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
