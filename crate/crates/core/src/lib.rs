//! Multi-scorer sleep staging toolkit: scorer consensus, label smoothing with
//! soft-consensus targets, a reference classifier, evaluation metrics, a
//! synthetic cohort generator and the experiment harness that ties them together.

pub mod cli;
pub mod consensus;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod records;
pub mod smoothing;
pub mod synthgen;
pub mod table;
pub mod viz;
