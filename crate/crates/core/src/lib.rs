//! Desk-scale diffusion-transformer laboratory.
//!
//! A self-contained pixel-space DiT with modulation-layer conditioning, a
//! deterministic synthetic-scene world with an oracle detector, guidance in
//! the modulation space with dynamic per-layer schedules, a distillation
//! retrofit for pooled conditioning, and the measurement passes that make
//! all of it checkable on a laptop CPU.

pub mod analysis;
pub mod commands;
pub mod config;
pub mod error;
pub mod guidance;
pub mod model;
pub mod nn;
pub mod retrofit;
pub mod rng;
pub mod tensor;
pub mod world;

pub use error::{Error, Result};
