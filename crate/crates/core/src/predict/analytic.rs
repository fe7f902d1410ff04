//! Localize-and-render predictors: transparent, fully testable stand-ins
//! for the trainable models.

use crate::grid::{step, Action};
use crate::render::{render, Frame, RenderConfig};

use super::localize::localize_object;
use super::motion::MotionField;
use super::{ActionPredictor, ExpertPredictor, PredictError, PredictorBundle};

/// Predicts the expert's next frame by localizing the object and replaying
/// the motion field, nearest demonstrated cell first.
#[derive(Debug, Clone)]
pub struct AnalyticExpert {
    field: MotionField,
    cfg: RenderConfig,
}

impl AnalyticExpert {
    pub fn new(field: MotionField, cfg: RenderConfig) -> Self {
        Self { field, cfg }
    }

    pub fn field(&self) -> &MotionField {
        &self.field
    }
}

impl ExpertPredictor for AnalyticExpert {
    fn predict_next(&mut self, history: &[Frame]) -> Result<Frame, PredictError> {
        let current = history.last().ok_or(PredictError::EmptyHistory)?;
        let pos = localize_object(current, &self.cfg)?;
        let action = self.field.nearest_action(pos)?;
        Ok(render(step(pos, action), &self.cfg, false))
    }

    fn output_dims(&self) -> (u32, u32) {
        (self.cfg.frame_width(), self.cfg.frame_height())
    }
}

/// Predicts the outcome of one primitive: localize, step, render.
#[derive(Debug, Clone)]
pub struct AnalyticAction {
    action: Action,
    cfg: RenderConfig,
}

impl AnalyticAction {
    pub fn new(action: Action, cfg: RenderConfig) -> Self {
        Self { action, cfg }
    }
}

impl ActionPredictor for AnalyticAction {
    fn predict(&self, current: &Frame) -> Result<Frame, PredictError> {
        let pos = localize_object(current, &self.cfg)?;
        Ok(render(step(pos, self.action), &self.cfg, false))
    }

    fn output_dims(&self) -> (u32, u32) {
        (self.cfg.frame_width(), self.cfg.frame_height())
    }
}

/// A full analytic bundle for one task's motion field.
pub fn analytic_bundle(
    field: MotionField,
    cfg: &RenderConfig,
) -> Result<PredictorBundle, PredictError> {
    PredictorBundle::new(
        Box::new(AnalyticExpert::new(field, *cfg)),
        Action::ALL.map(|a| -> Box<dyn ActionPredictor> { Box::new(AnalyticAction::new(a, *cfg)) }),
    )
}
