//! Next-frame predictors.
//!
//! Two prediction roles exist: an *expert* predictor guesses the frame
//! that would follow if the demonstrator acted, and one *action*
//! predictor per primitive guesses the frame that follows the robot
//! executing that primitive. Three interchangeable flavors implement
//! both roles:
//!
//! * [`oracle`] - consults the simulator's ground truth; a baseline for
//!   tests and harness sweeps only. It cannot be built from recorded
//!   data: constructing one requires the task spec and render config.
//! * [`analytic`] - localizes the object in the frame and replays the
//!   motion observed in demonstrations, generalizing to unseen cells by
//!   nearest demonstrated cell.
//! * [`neural`] - a small convolutional-recurrent network trained on
//!   demonstration frames.
//!
//! Deployment-mode predictors are frame-in/frame-out: the traits expose
//! no channel for grid states or expert action labels.

pub mod analytic;
pub mod localize;
pub mod motion;
pub mod neural;
pub mod oracle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Action, GridError, GridPos};
use crate::render::{downsample, Frame, RenderError};

pub use analytic::{AnalyticAction, AnalyticExpert};
pub use localize::localize_object;
pub use motion::MotionField;
pub use neural::{
    gradient_check, train, ArchSpec, NeuralAction, NeuralExpert, NeuralWeights, TrainConfig,
    TrainError, TrainOutcome, WeightsError,
};
pub use oracle::{oracle_action_frame, oracle_expert_frame, OracleAction, OracleExpert};

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("no object-colored pixels found in frame")]
    ObjectNotFound,
    #[error("motion field is empty")]
    EmptyField,
    #[error("motion field conflict at {pos}: {a} vs {b}")]
    FieldConflict { pos: GridPos, a: Action, b: Action },
    #[error("zero-length transition at {pos} is ambiguous")]
    AmbiguousTransition { pos: GridPos },
    #[error("motion field needs demonstrations of exactly one task, got {0}")]
    MixedLabels(String),
    #[error("frame does not match any rendered state")]
    UnknownFrame,
    #[error("no history frames supplied")]
    EmptyHistory,
    #[error(
        "frame dimensions {got_w}x{got_h} incompatible with predictor input {want_w}x{want_h}"
    )]
    InputMismatch {
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
    #[error("predictor output resolutions are incompatible")]
    IncompatibleResolutions,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
}

/// Predictor flavor selector, used by run configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Oracle,
    Analytic,
    Neural,
}

/// Predicts the frame the expert's next move would produce.
///
/// `history` holds the frames physically visited so far, oldest first;
/// the episode runner owns it. Sequence-fed operation passes the whole
/// episode, single-image operation passes only the latest frame.
pub trait ExpertPredictor: Send {
    /// Reset any per-episode state. Stateless predictors ignore this.
    fn begin_episode(&mut self) {}

    fn predict_next(&mut self, history: &[Frame]) -> Result<Frame, PredictError>;

    /// Width and height of predicted frames.
    fn output_dims(&self) -> (u32, u32);
}

/// Predicts the frame one fixed action primitive would produce.
pub trait ActionPredictor: Send + Sync {
    fn predict(&self, current: &Frame) -> Result<Frame, PredictError>;

    fn output_dims(&self) -> (u32, u32);
}

/// An expert predictor plus the four action predictors in canonical
/// order, with all outputs harmonized to one resolution so that pixel
/// errors are comparable.
pub struct PredictorBundle {
    pub expert: Box<dyn ExpertPredictor>,
    pub actions: [Box<dyn ActionPredictor>; 4],
}

impl PredictorBundle {
    /// Wrap mismatched predictors so every output lands at the smallest
    /// resolution present. Errors unless all resolutions are integer
    /// multiples of the smallest.
    pub fn new(
        expert: Box<dyn ExpertPredictor>,
        actions: [Box<dyn ActionPredictor>; 4],
    ) -> Result<Self, PredictError> {
        let mut dims = vec![expert.output_dims()];
        dims.extend(actions.iter().map(|a| a.output_dims()));
        let (min_w, min_h) = dims
            .iter()
            .copied()
            .min_by_key(|&(w, h)| (w, h))
            .expect("bundle has five predictors");
        for &(w, h) in &dims {
            let ok = w % min_w == 0 && h % min_h == 0 && w / min_w == h / min_h;
            if !ok {
                return Err(PredictError::IncompatibleResolutions);
            }
        }
        let expert = if expert.output_dims() == (min_w, min_h) {
            expert
        } else {
            Box::new(DownscaledExpert {
                factor: expert.output_dims().0 / min_w,
                inner: expert,
            })
        };
        let actions = actions.map(|a| -> Box<dyn ActionPredictor> {
            if a.output_dims() == (min_w, min_h) {
                a
            } else {
                Box::new(DownscaledAction {
                    factor: a.output_dims().0 / min_w,
                    inner: a,
                })
            }
        });
        Ok(Self { expert, actions })
    }

    pub fn output_dims(&self) -> (u32, u32) {
        self.expert.output_dims()
    }
}

/// Output adapter: block-averages an expert predictor's frames down to
/// the bundle resolution.
struct DownscaledExpert {
    inner: Box<dyn ExpertPredictor>,
    factor: u32,
}

impl ExpertPredictor for DownscaledExpert {
    fn begin_episode(&mut self) {
        self.inner.begin_episode();
    }

    fn predict_next(&mut self, history: &[Frame]) -> Result<Frame, PredictError> {
        Ok(downsample(&self.inner.predict_next(history)?, self.factor)?)
    }

    fn output_dims(&self) -> (u32, u32) {
        let (w, h) = self.inner.output_dims();
        (w / self.factor, h / self.factor)
    }
}

struct DownscaledAction {
    inner: Box<dyn ActionPredictor>,
    factor: u32,
}

impl ActionPredictor for DownscaledAction {
    fn predict(&self, current: &Frame) -> Result<Frame, PredictError> {
        Ok(downsample(&self.inner.predict(current)?, self.factor)?)
    }

    fn output_dims(&self) -> (u32, u32) {
        let (w, h) = self.inner.output_dims();
        (w / self.factor, h / self.factor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TaskSpec;
    use crate::render::RenderConfig;

    #[test]
    fn bundle_harmonizes_resolutions() {
        let cfg = RenderConfig::default();
        let task = TaskSpec::movetopos();
        // Oracle predictors at full resolution, one wrapped to half size.
        let bundle = oracle::oracle_bundle(&task, &cfg).unwrap();
        assert_eq!(bundle.output_dims(), (120, 72));

        let expert: Box<dyn ExpertPredictor> = Box::new(DownscaledExpert {
            inner: Box::new(OracleExpert::new(task, cfg)),
            factor: 2,
        });
        let actions = Action::ALL.map(|a| -> Box<dyn ActionPredictor> {
            Box::new(OracleAction::new(a, cfg))
        });
        let mixed = PredictorBundle::new(expert, actions).unwrap();
        assert_eq!(mixed.output_dims(), (60, 36));
    }
}
