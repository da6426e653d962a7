//! Adaptive cross-form learning for skeleton-based action recognition.
//!
//! A small, self-contained training lab: a reverse-mode tensor core, skeleton
//! forms and a synthetic action generator, a generic spatial-temporal GCN,
//! the cross-form mimicking machinery, and an experiment engine.

pub mod error;
pub mod numerics;
pub mod skeleton;
pub mod gcn;
pub mod acfl;

pub use error::{Error, Result};
pub mod training;
