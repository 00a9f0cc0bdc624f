//! Backward-compatibility analysis for machine-learning model updates.
//!
//! The crate measures how much of an old model's correct behavior an updated
//! model preserves ([`compat`]), corrupts training data with structured noise
//! ([`noise`]), trains small models with an optional compatibility penalty
//! ([`trainer`]), relates incompatibility to example forgetting
//! ([`forgetting`]), orchestrates repeatable experiments ([`experiments`]) and
//! propagates per-character accuracy into word-level failure rates
//! ([`pipeline`]).

pub mod cli;
pub mod compat;
pub mod dataset;
pub mod experiments;
pub mod forgetting;
pub mod jsonl;
pub mod noise;
pub mod pipeline;
pub mod seed;
pub mod synth;
pub mod trainer;

/// Class label id.
pub type Label = i64;
