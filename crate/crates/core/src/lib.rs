//! Budget-constrained customs inspection selection.
//!
//! A weekly simulation of customs declarations: a dual-head model scores
//! each declaration for fraud and expected revenue, a selection strategy
//! spends the week's inspection budget, inspected labels are revealed and
//! the model is retrained on everything inspected so far.

pub mod cli;
pub mod features;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod selection;
pub mod simulate;
pub mod synthgen;
