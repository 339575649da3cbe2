//! Contextual-bandit models for the map veto of best-of-three matches.
//!
//! The crate covers the whole offline loop: ingesting match logs, building
//! decision datasets with running-win-rate contexts, training softmax
//! policies by policy gradient, estimating their value off-policy, and a
//! synthetic ecosystem whose ground truth is known exactly.

pub mod data_io;
pub mod domain;
pub mod draft;
pub mod error;
pub mod features;
pub mod model_io;
pub mod ope;
pub mod policy;
pub mod rewards;
pub mod simulator;
pub mod training;

pub use error::{Error, Result};
