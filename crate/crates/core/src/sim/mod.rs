//! Deterministic virtual world: synthetic human reaches, delayed object
//! detection, arm execution on a virtual clock and single-trial runs.

mod human;
mod trial;
mod world;

use thiserror::Error;

use crate::arbitration::ArbitrationError;
use crate::geometry::GeometryError;
use crate::grid::GridError;
use crate::model::ModelError;
use crate::planner::PlanError;

pub use human::{gaze_fallback, gen_trajectory, min_jerk, HumanTrajectory, SimConfig};
pub use trial::{
    run_trial, Mode, Pipeline, PipelineOutput, PredictionError, Predictor, TrialConfig, TrialResult,
};
pub use world::{ArmExecutor, ObjectState, World, WorldEvent};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid sim config: {0}")]
    BadConfig(&'static str),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Arbitration(#[from] ArbitrationError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("step size must be positive, got {0}")]
    BadStep(f64),
    #[error("clock cannot move backwards from {now} to {to}")]
    ClockBackwards { now: f64, to: f64 },
    #[error("trial did not reach a grasp within {0} s")]
    TrialTimeout(f64),
    #[error("trial stalled at t = {0} with nothing left to happen")]
    Stalled(f64),
    #[error("preemptive mode needs a predictor")]
    MissingPredictor,
}
