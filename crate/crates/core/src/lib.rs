//! Tabular mirror learning.
//!
//! Exact policy evaluation on small MDPs, drift functionals and
//! neighbourhood operators, the constrained mirror update with its
//! sampled estimators, a training loop that checks the improvement
//! guarantees at runtime, and a policy-graph view of the search.

pub mod dag;
pub mod drift;
pub mod env;
pub mod error;
pub mod experiment;
pub mod mdp;
pub mod mirror;
pub mod neighbourhood;
pub mod policy;

pub use error::{Error, Result};
