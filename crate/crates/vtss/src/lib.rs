//! Visual-transformation self-supervision (VTSS) experiment framework.
//!
//! The crate implements pretext tasks that predict geometric transformation
//! instantiations (rotation, translation, scale and additive combinations),
//! the conflict-injection protocol that plants those instantiations into the
//! original data, frozen-feature semi-supervised evaluation, and a direct
//! nearest-neighbor measurement of transformation conflict.

pub mod conflict;
pub mod config;
pub mod datasets;
pub mod error;
pub mod experiments;
pub mod model;
pub mod nn;
pub mod pretext;
pub mod report;
pub mod synth;
pub mod trainer;
pub mod transforms;

pub use error::{Error, Result};
