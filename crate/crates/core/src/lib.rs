//! Point-wise dependency estimation for black-box action generators.
//!
//! The crate trains a two-tower estimator of `p(a, x) / (p(a) p(x))` between a
//! context (user prompt plus executed actions) and a candidate action, calibrates
//! a trust threshold with split conformal prediction, and runs a step-by-step
//! planning agent that filters generated candidates through that threshold.
//!
//! Batch-shaped work (gradient accumulation, pair scoring, per-prompt
//! evaluation) goes through [`par`], which uses rayon when the `parallel`
//! feature is enabled and a plain sequential loop otherwise. Both paths reduce
//! in a fixed order, so results are bit-identical either way.

pub mod agent;
pub mod conformal;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod par;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
