//! Short Boolean formula classifiers for tabular data.
//!
//! The pipeline reads a CSV table, one-hot encodes categorical columns and
//! scales numeric columns to integers ([`dataset`]). Numeric attributes are
//! turned into propositions either statically at the median or dynamically
//! with pivot (`x ≥ r`) or interval (`x ∈ [l, u]`) thresholds chosen during
//! search ([`propspace`]). Formulas over those propositions live in reverse
//! Polish form ([`formula`]) and are found by an exact, anytime
//! branch-and-bound over canonical formula shapes ([`search`]). The
//! length-bounded search is driven by a validation loop with early stopping
//! ([`fsm`]) and scored with k-fold cross-validation ([`report`]).

pub mod bits;
pub mod dataset;
mod error;
pub mod formula;
pub mod fsm;
pub mod propspace;
pub mod report;
pub mod search;

pub use error::{Error, Result};
