//! Ground-truth predictors.
//!
//! These consult the simulator itself (task spec, dynamics, renderer) and
//! exist to isolate the policy layer in tests and harness baselines. They
//! cannot be constructed from recorded data, which keeps them out of any
//! deployment path by construction: frames are mapped back to states via
//! an exact lookup over all rendered cells.

use std::collections::HashMap;
use std::sync::Arc;

use crate::grid::{step, Action, GridPos, TaskSpec};
use crate::render::{render, Frame, RenderConfig};

use super::{ActionPredictor, ExpertPredictor, PredictError, PredictorBundle};

/// Exact frame-bytes -> state lookup for one render config (armless view).
#[derive(Debug, Clone)]
pub struct FrameIndex {
    by_bytes: HashMap<Vec<u8>, GridPos>,
}

impl FrameIndex {
    pub fn new(cfg: RenderConfig) -> Self {
        let by_bytes = GridPos::all()
            .map(|p| (render(p, &cfg, false).as_bytes().to_vec(), p))
            .collect();
        Self { by_bytes }
    }

    pub fn lookup(&self, frame: &Frame) -> Result<GridPos, PredictError> {
        self.by_bytes
            .get(frame.as_bytes())
            .copied()
            .ok_or(PredictError::UnknownFrame)
    }
}

/// The exact expert successor frame for a known state: the goal renders
/// unchanged, every other state renders one expert move ahead.
pub fn oracle_expert_frame(
    task: &TaskSpec,
    pos: GridPos,
    cfg: &RenderConfig,
) -> Result<Frame, PredictError> {
    let next = match task.expert_action(pos)? {
        Some(action) => step(pos, action),
        None => pos,
    };
    Ok(render(next, cfg, false))
}

/// The exact successor frame under one primitive.
pub fn oracle_action_frame(pos: GridPos, action: Action, cfg: &RenderConfig) -> Frame {
    render(step(pos, action), cfg, false)
}

pub struct OracleExpert {
    task: TaskSpec,
    cfg: RenderConfig,
    index: Arc<FrameIndex>,
}

impl OracleExpert {
    pub fn new(task: TaskSpec, cfg: RenderConfig) -> Self {
        Self {
            task,
            cfg,
            index: Arc::new(FrameIndex::new(cfg)),
        }
    }

    pub fn with_index(task: TaskSpec, cfg: RenderConfig, index: Arc<FrameIndex>) -> Self {
        Self { task, cfg, index }
    }
}

impl ExpertPredictor for OracleExpert {
    fn predict_next(&mut self, history: &[Frame]) -> Result<Frame, PredictError> {
        let current = history.last().ok_or(PredictError::EmptyHistory)?;
        let pos = self.index.lookup(current)?;
        oracle_expert_frame(&self.task, pos, &self.cfg)
    }

    fn output_dims(&self) -> (u32, u32) {
        (self.cfg.frame_width(), self.cfg.frame_height())
    }
}

pub struct OracleAction {
    action: Action,
    cfg: RenderConfig,
    index: Arc<FrameIndex>,
}

impl OracleAction {
    pub fn new(action: Action, cfg: RenderConfig) -> Self {
        Self {
            action,
            cfg,
            index: Arc::new(FrameIndex::new(cfg)),
        }
    }

    pub fn with_index(action: Action, cfg: RenderConfig, index: Arc<FrameIndex>) -> Self {
        Self { action, cfg, index }
    }
}

impl ActionPredictor for OracleAction {
    fn predict(&self, current: &Frame) -> Result<Frame, PredictError> {
        let pos = self.index.lookup(current)?;
        Ok(oracle_action_frame(pos, self.action, &self.cfg))
    }

    fn output_dims(&self) -> (u32, u32) {
        (self.cfg.frame_width(), self.cfg.frame_height())
    }
}

/// A full oracle bundle sharing one frame index.
pub fn oracle_bundle(task: &TaskSpec, cfg: &RenderConfig) -> Result<PredictorBundle, PredictError> {
    let index = Arc::new(FrameIndex::new(*cfg));
    PredictorBundle::new(
        Box::new(OracleExpert::with_index(*task, *cfg, index.clone())),
        Action::ALL.map(|a| -> Box<dyn ActionPredictor> {
            Box::new(OracleAction::with_index(a, *cfg, index.clone()))
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TaskId;

    fn pos(x: u8, y: u8) -> GridPos {
        GridPos::new(x, y).unwrap()
    }

    #[test]
    fn expert_prediction_tracks_policy() {
        let cfg = RenderConfig::default();
        let task = TaskSpec::new(TaskId::MoveToPos);
        let mut expert = OracleExpert::new(task, cfg);
        let frame = render(pos(14, 2), &cfg, false);
        assert_eq!(
            expert.predict_next(&[frame]).unwrap(),
            render(pos(14, 3), &cfg, false)
        );
    }

    #[test]
    fn unknown_frame_is_rejected() {
        let cfg = RenderConfig::default();
        let mut expert = OracleExpert::new(TaskSpec::movetopos(), cfg);
        let alien = Frame::filled(cfg.frame_width(), cfg.frame_height(), [1, 2, 3]);
        assert!(matches!(
            expert.predict_next(&[alien]),
            Err(PredictError::UnknownFrame)
        ));
    }

    #[test]
    fn action_prediction_steps_and_clamps() {
        let cfg = RenderConfig::default();
        let up = OracleAction::new(Action::Up, cfg);
        let out = up.predict(&render(pos(14, 8), &cfg, false)).unwrap();
        assert_eq!(out, render(pos(14, 8), &cfg, false));
    }
}
