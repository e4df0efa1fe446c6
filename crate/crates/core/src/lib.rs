//! Bayesian additive regression trees with shared, sparsity-inducing
//! splitting probabilities for joint exposure/outcome modelling and
//! confounder selection.

pub mod backfit;
pub mod chain;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimands;
pub mod forest;
pub mod io;
pub mod moves;
pub mod prior;
pub mod sampling;
pub mod sim;
pub mod tree;

pub use error::{BartError, Result};
