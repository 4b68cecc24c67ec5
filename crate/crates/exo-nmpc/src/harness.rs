//! Experiment orchestration: run configuration, the closed-loop simulation
//! of human + robot + controller under the deterministic uncertainty models,
//! metrics, CSV/SVG export, and the self-test suite behind the CLI.

pub mod config;
pub mod log;
pub mod metrics;
pub mod plot;
pub mod selftest;
pub mod sensors;
pub mod sim;
pub mod sweep;

use thiserror::Error;

pub use config::{ControllerKind, SimConfig, UncertaintyConfig};
pub use log::{LogRow, RunEvents, SimLog};
pub use metrics::{compute_metrics, Metrics};
pub use sensors::{disturbance_models, DisturbanceInputs, MovingAverage};
pub use sim::run_simulation;
pub use sweep::{sweep_payloads, SweepRow};

/// Errors surfaced by the harness.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("simulation diverged: non-finite state at t = {t:.3} s ({controller})")]
    NonFiniteState { t: f64, controller: &'static str },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
