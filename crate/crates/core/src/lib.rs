//! Visual imitation on a desk-scale grid world.
//!
//! An agent watches an expert move an object across a 15x9 grid and learns
//! to repeat the task from rendered RGB frames alone: no action labels, no
//! shared action space. At every step the agent predicts what the scene
//! would look like if the expert had acted, predicts what it would look
//! like after each of its own action primitives, and executes the action
//! whose predicted outcome is closest in pixel space.
//!
//! The crate is organized along the pipeline:
//!
//! * [`grid`] - discrete state space, dynamics and scripted expert policies
//! * [`render`] / [`ppm`] - deterministic rasterizer and the P6 frame format
//! * [`dataset`] - demonstration generation and the on-disk dataset layout
//! * [`predict`] - oracle, analytic and trainable neural next-frame predictors
//! * [`policy`] - the argmin-of-prediction-error controller and episode loop
//! * [`eval`] - full-grid sweeps, reports, failure taxonomy, fault injection

pub mod dataset;
pub mod eval;
pub mod grid;
pub mod policy;
pub mod ppm;
pub mod predict;
pub mod render;

pub use dataset::{DatasetManifest, DemoLabel, DemoPlan, DemoRole, Demonstration};
pub use eval::{EvalReport, FailureType, StartRecord};
pub use grid::{step, Action, GridPos, TaskId, TaskSpec, GRID_H, GRID_W};
pub use policy::{run_episode, select_action, Outcome, PolicyMode, Trajectory};
pub use predict::{
    ActionPredictor, ExpertPredictor, MotionField, PredictorBundle, PredictorKind, TrainConfig,
};
pub use render::{frame_mse, render, Frame, RenderConfig};
