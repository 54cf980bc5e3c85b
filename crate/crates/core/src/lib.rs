//! Search-based preference weighting for reward learning.
//!
//! Preference-labelled trajectory segments are weighted step by step by
//! their nearest-neighbour distance to a small set of expert transitions; the
//! weights turn each segment's Bradley–Terry logit into a weighted average of
//! per-step rewards.

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod policy;
pub mod exec;
pub mod experiment;
pub mod reward_model;
pub mod rng;
pub mod search;
pub mod weighting;

pub use error::{Result, SpwError};
