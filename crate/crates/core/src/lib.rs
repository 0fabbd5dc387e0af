//! Planning, tracking and low-level control for a differential-drive AGV,
//! with a deterministic two-rate closed-loop simulator.
//!
//! Pipeline: occupancy grid → A* → densify → receding-horizon smoothing →
//! heading fit → curvature-limited velocity plan → MPC (or PID) tracking at
//! 20 Hz → reduced-order ESO (or PID) torque control at 100 Hz → plant.

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod model;
pub mod nlp;
pub mod par;
pub mod planner;
pub mod reso;
pub mod sim;
pub mod tracker;
pub mod verify;
pub mod world;

pub use model::{DynamicParams, Pose, VelocityState, WheelTorques};
pub use par::Execution;
