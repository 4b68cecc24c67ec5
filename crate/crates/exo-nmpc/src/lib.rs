//! Closed-loop simulation workbench for robust control of a planar
//! lower-limb exoskeleton coupled to a simulated human leg.
//!
//! The robot tracks the human's swing-phase motion using nonlinear MPC, with
//! only the strap interaction forces as its window into the human. Two
//! controllers are provided: a non-robust NMPC with a fixed nominal model,
//! and a multi-stage NMPC that hedges over a bank of payload scenarios,
//! weighs them with parallel extended Kalman filters, and blends the
//! per-scenario torque increments by scenario probability.
//!
//! Modules:
//! - [`dynamics`]: planar 1-/2-link rigid-body dynamics and RK4 integration
//! - [`interaction`]: strap spring-damper forces and the force-based
//!   human-state estimator
//! - [`human`]: swing trajectories and the simulated human controller
//! - [`optimizer`]: dense SQP with an active-set QP subproblem solver
//! - [`nmpc`]: the non-robust receding-horizon controller
//! - [`msnmpc`]: the scenario-tree robust controller with per-scenario EKFs
//! - [`harness`]: experiment configs, the closed-loop simulator, metrics,
//!   CSV export, and self-tests
//!
//! See the `examples/` directory for one runnable example per capability and
//! the `exo-nmpc` binary for the `run` / `sweep` / `selftest` command line.

pub mod dynamics;
pub mod human;
pub mod interaction;
pub mod msnmpc;
pub mod nmpc;
pub mod optimizer;

pub use dynamics::{JointState, LimbModel, LinkParams};
pub use nmpc::NmpcConfig;
