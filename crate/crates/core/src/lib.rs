//! Explainable course recommendation by policy-guided path reasoning over an
//! educational knowledge graph.

pub mod baselines;
pub mod beam;
pub mod checkpoint;
pub mod embed;
pub mod env;
pub mod error;
pub mod kg;
pub mod metrics;
pub mod optim;
pub mod patterns;
pub mod pipeline;
pub mod policy;
pub mod synth;

pub use error::{Error, Result};
