//! Causal minimax subset selection.
//!
//! Graph separation and MAG projection primitives, recovery of the
//! equivalence classes of stable subsets, exact worst-case risks on
//! finite-domain SCMs, oracle-driven structure discovery and chain-based
//! complexity metrics.

pub mod complexity;
pub mod discovery;
pub mod equivalence;
pub mod error;
pub mod graph;
pub mod mag;
pub mod minimax;
pub mod scm;
pub mod set;

pub use error::{Error, Result};
pub use graph::{GraphJson, Kind, Mark, MixedGraph, Path, ProblemSpec};
pub use set::VSet;
