//! Anisotropic first-order aggregation dynamics with implicitly defined
//! velocities: root analysis of the velocity equation, a degenerate
//! simulator with breakdown detection and jump selection, and the
//! ε-relaxation system used to justify and cross-check the jumps.

pub mod degenerate;
pub mod error;
pub mod model;
pub mod output;
pub mod polar;
pub mod relaxation;
pub mod scenario;

pub use degenerate::{
    run_degenerate, BreakdownEvent, BreakdownKind, SimParams, Termination, TrajectoryLog,
};
pub use error::{Error, Result};
pub use model::{KernelParams, ModelParams, PhaseState, VisionForm, VisionParams};
pub use relaxation::{adjoint_flow, run_relaxation, sweep_epsilon, AdjointOptions, EpsParams};
pub use scenario::ScenarioSpec;
