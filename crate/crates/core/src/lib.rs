//! Preemptive pick-up of human-placed objects: intent prediction from hand and
//! gaze features, fused placement heatmaps, predictive/definitive motion
//! arbitration, trajectory optimization for a gantry arm, and a deterministic
//! simulation and study harness around them.

// NaN-rejecting `!(x > 0.0)` checks and index loops over parallel arrays are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod arbitration;
pub mod config;
pub mod eval;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod labels;
pub mod memory;
pub mod model;
pub mod planner;
pub mod sim;
