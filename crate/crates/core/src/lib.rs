//! Chronology-aware motion-language alignment.
//!
//! The crate builds compound-action motion/text corpora, turns descriptions
//! into ordered events and shuffled-event negatives, trains two-tower
//! encoders with a contrastive objective that sees those negatives, and
//! evaluates chronological grounding alongside standard retrieval metrics.

pub mod config;
pub mod corpus;
pub mod diagnostics;
pub mod error;
pub mod evalsuite;
pub mod events;
pub mod model;
pub mod objective;
pub mod par;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
