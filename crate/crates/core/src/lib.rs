//! Tool-use agents trained from decision-tree preferences.
//!
//! Expert annotation runs a depth-first decision-tree search over a synthetic
//! tool world; successful and failed branches become step-wise preference
//! pairs; a log-linear policy is fine-tuned on successful paths and then
//! trained with direct preference optimization.

pub mod dfsdt;
pub mod eval;
pub mod forge;
pub mod pipeline;
pub mod policy;
pub mod trainer;
pub mod trajectory;
pub mod world;
