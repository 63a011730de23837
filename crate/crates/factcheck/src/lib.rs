//! Fact-checking toolkit: joint veracity classification and explanation
//! summarization over a shared encoder, with evidence selection, exact
//! text-overlap and classification metrics, and a grid-search harness.
//!
//! The numeric core is deliberately tiny and fully deterministic so every
//! behavior is checkable at desk scale; the model backend sits behind a
//! trait for swapping in larger encoders.

pub mod backbone;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evidence;
pub mod metrics;
pub mod objective;
pub mod pipeline;
pub mod report;
pub mod sweep;
pub mod trainer;

pub use error::{Error, Result};
