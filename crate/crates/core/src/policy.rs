//! The controller: compare the predicted expert outcome with each
//! action's predicted outcome and execute the action with the smallest
//! pixel error, in a closed loop until the goal or a step budget.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{step, Action, GridError, GridPos, TaskSpec};
use crate::predict::{PredictError, PredictorBundle};
use crate::render::{frame_mse, render, Frame, RenderConfig, RenderError};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("predictor failed at step {step}: {source}")]
    Predictor {
        step: usize,
        #[source]
        source: PredictError,
    },
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("max_steps must be at least 1")]
    NoBudget,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

/// How the expert predictor is fed during an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    /// The expert prediction sees only the current frame; history is
    /// discarded every step.
    SingleImage,
    /// Every physically visited frame is appended to the history before
    /// predicting.
    SequenceFed,
}

impl PolicyMode {
    pub fn name(self) -> &'static str {
        match self {
            PolicyMode::SingleImage => "single_image",
            PolicyMode::SequenceFed => "sequence_fed",
        }
    }
}

impl std::fmt::Display for PolicyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    ReachedGoal { steps: usize },
    Timeout,
}

impl Outcome {
    pub fn reached_goal(self) -> bool {
        matches!(self, Outcome::ReachedGoal { .. })
    }
}

/// One closed-loop episode: everything needed to audit each decision,
/// including the full error vector and the expert prediction per step.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub start: GridPos,
    pub visited: Vec<GridPos>,
    pub actions: Vec<Action>,
    /// Per step, the four prediction errors in canonical action order.
    pub step_errors: Vec<[f64; 4]>,
    pub expert_predictions: Vec<Frame>,
    pub outcome: Outcome,
}

impl Trajectory {
    /// Check internal consistency against the grid dynamics.
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.visited.first() != Some(&self.start) {
            return Err(PolicyError::InvalidTrajectory(
                "trajectory does not begin at its start".into(),
            ));
        }
        if self.visited.len() != self.actions.len() + 1
            || self.actions.len() != self.step_errors.len()
            || self.actions.len() != self.expert_predictions.len()
        {
            return Err(PolicyError::InvalidTrajectory(format!(
                "length mismatch: {} states, {} actions, {} error vectors",
                self.visited.len(),
                self.actions.len(),
                self.step_errors.len()
            )));
        }
        for (i, action) in self.actions.iter().enumerate() {
            if step(self.visited[i], *action) != self.visited[i + 1] {
                return Err(PolicyError::InvalidTrajectory(format!(
                    "step {i} violates grid dynamics"
                )));
            }
        }
        Ok(())
    }
}

/// Index of the smallest error, canonical order breaking ties (the first
/// strict minimum wins).
pub fn argmin_canonical(errors: &[f64; 4]) -> Action {
    let mut best = Action::Up;
    let mut best_err = errors[0];
    for action in Action::ALL {
        let e = errors[action.index()];
        if e < best_err {
            best = action;
            best_err = e;
        }
    }
    best
}

/// Pick the action whose predicted outcome is closest to the predicted
/// expert outcome. Returns the choice together with all four errors in
/// canonical order.
pub fn select_action(
    expert_pred: &Frame,
    action_preds: &[Frame; 4],
) -> Result<(Action, [f64; 4]), RenderError> {
    let mut errors = [0.0; 4];
    for action in Action::ALL {
        errors[action.index()] = frame_mse(expert_pred, &action_preds[action.index()])?;
    }
    Ok((argmin_canonical(&errors), errors))
}

/// Run one episode from `start`.
///
/// Every step renders the agent's own (armless) view of the current
/// state, feeds it to the predictors, and executes the selected action.
/// The episode ends when the goal is reached or after `max_steps` moves.
pub fn run_episode(
    task: &TaskSpec,
    cfg: &RenderConfig,
    start: GridPos,
    bundle: &mut PredictorBundle,
    mode: PolicyMode,
    max_steps: usize,
) -> Result<Trajectory, PolicyError> {
    if max_steps == 0 {
        return Err(PolicyError::NoBudget);
    }
    bundle.expert.begin_episode();

    let mut visited = vec![start];
    let mut actions = Vec::new();
    let mut step_errors = Vec::new();
    let mut expert_predictions = Vec::new();
    let mut history: Vec<Frame> = Vec::new();
    let mut pos = start;

    let outcome = loop {
        if task.is_goal(pos) {
            break Outcome::ReachedGoal {
                steps: actions.len(),
            };
        }
        if actions.len() == max_steps {
            break Outcome::Timeout;
        }
        let step_idx = actions.len();
        let current = render(pos, cfg, false);
        if mode == PolicyMode::SingleImage {
            history.clear();
        }
        history.push(current.clone());

        let expert_pred = bundle
            .expert
            .predict_next(&history)
            .map_err(|source| PolicyError::Predictor {
                step: step_idx,
                source,
            })?;
        let mut action_preds = Vec::with_capacity(4);
        for predictor in &bundle.actions {
            action_preds.push(predictor.predict(&current).map_err(|source| {
                PolicyError::Predictor {
                    step: step_idx,
                    source,
                }
            })?);
        }
        let action_preds: [Frame; 4] = action_preds.try_into().expect("four action predictors");

        let (action, errors) = select_action(&expert_pred, &action_preds)?;
        pos = step(pos, action);
        visited.push(pos);
        actions.push(action);
        step_errors.push(errors);
        expert_predictions.push(expert_pred);
    };

    let trajectory = Trajectory {
        start,
        visited,
        actions,
        step_errors,
        expert_predictions,
        outcome,
    };
    trajectory.validate()?;
    Ok(trajectory)
}

/// Extra steps a successful trajectory took beyond the expert's path;
/// `None` for timeouts.
pub fn deviation(traj: &Trajectory, task: &TaskSpec) -> Result<Option<usize>, GridError> {
    match traj.outcome {
        Outcome::ReachedGoal { steps } => {
            let ground_truth = task.ground_truth_path_length(traj.start)?;
            Ok(Some(steps - ground_truth))
        }
        Outcome::Timeout => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predict::oracle::{oracle_bundle, oracle_expert_frame};
    use crate::predict::{ActionPredictor, ExpertPredictor, PredictorBundle};
    use crate::render::frame_mse;

    fn pos(x: u8, y: u8) -> GridPos {
        GridPos::new(x, y).unwrap()
    }

    #[test]
    fn exact_match_wins_with_zero_error() {
        let cfg = RenderConfig::default();
        let preds = [
            render(pos(5, 3), &cfg, false),
            render(pos(5, 1), &cfg, false),
            render(pos(4, 2), &cfg, false),
            render(pos(6, 2), &cfg, false),
        ];
        let expert = preds[Action::Left.index()].clone();
        let (action, errors) = select_action(&expert, &preds).unwrap();
        assert_eq!(action, Action::Left);
        assert_eq!(errors[Action::Left.index()], 0.0);
        assert!(errors.iter().filter(|&&e| e > 0.0).count() == 3);
    }

    #[test]
    fn all_identical_predictions_fall_back_to_up() {
        let cfg = RenderConfig::default();
        let f = render(pos(7, 7), &cfg, false);
        let (action, errors) =
            select_action(&f, &[f.clone(), f.clone(), f.clone(), f.clone()]).unwrap();
        assert_eq!(action, Action::Up);
        assert_eq!(errors, [0.0; 4]);
    }

    #[test]
    fn oracle_predictions_choose_left_in_lower_half() {
        let cfg = RenderConfig::default();
        let task = TaskSpec::pushpull();
        let p = pos(5, 1);
        let expert = oracle_expert_frame(&task, p, &cfg).unwrap();
        let preds: [Frame; 4] =
            Action::ALL.map(|a| render(step(p, a), &cfg, false));
        // Brute-force check against raw MSE values.
        let mut best = None::<(f64, Action)>;
        for a in Action::ALL {
            let e = frame_mse(&expert, &preds[a.index()]).unwrap();
            if best.map_or(true, |(b, _)| e < b) {
                best = Some((e, a));
            }
        }
        assert_eq!(best.unwrap().1, Action::Left);
        let (action, _) = select_action(&expert, &preds).unwrap();
        assert_eq!(action, Action::Left);
    }

    #[test]
    fn oracle_episode_reaches_goal_without_deviation() {
        let cfg = RenderConfig::default();
        let task = TaskSpec::movetopos();
        for mode in [PolicyMode::SingleImage, PolicyMode::SequenceFed] {
            let mut bundle = oracle_bundle(&task, &cfg).unwrap();
            let budget = task.step_budget(pos(0, 0)).unwrap();
            let traj =
                run_episode(&task, &cfg, pos(0, 0), &mut bundle, mode, budget).unwrap();
            assert_eq!(traj.outcome, Outcome::ReachedGoal { steps: 22 });
            assert_eq!(deviation(&traj, &task).unwrap(), Some(0));
            assert_eq!(traj.visited[0], pos(0, 0));
        }
    }

    /// Predictors that always claim the frame will not change.
    struct Frozen(RenderConfig);

    impl ExpertPredictor for Frozen {
        fn predict_next(&mut self, history: &[Frame]) -> Result<Frame, PredictError> {
            Ok(history.last().unwrap().clone())
        }

        fn output_dims(&self) -> (u32, u32) {
            (self.0.frame_width(), self.0.frame_height())
        }
    }

    impl ActionPredictor for Frozen {
        fn predict(&self, current: &Frame) -> Result<Frame, PredictError> {
            Ok(current.clone())
        }

        fn output_dims(&self) -> (u32, u32) {
            (self.0.frame_width(), self.0.frame_height())
        }
    }

    #[test]
    fn frozen_predictors_time_out_drifting_up() {
        let cfg = RenderConfig::default();
        let task = TaskSpec::movetopos();
        let mut bundle = PredictorBundle::new(
            Box::new(Frozen(cfg)),
            [
                Box::new(Frozen(cfg)) as Box<dyn ActionPredictor>,
                Box::new(Frozen(cfg)),
                Box::new(Frozen(cfg)),
                Box::new(Frozen(cfg)),
            ],
        )
        .unwrap();
        let traj = run_episode(
            &task,
            &cfg,
            pos(0, 0),
            &mut bundle,
            PolicyMode::SequenceFed,
            20,
        )
        .unwrap();
        assert_eq!(traj.outcome, Outcome::Timeout);
        // Ties everywhere: canonical order picks up until the top clamp.
        assert!(traj.actions.iter().all(|&a| a == Action::Up));
        assert_eq!(deviation(&traj, &task).unwrap(), None);
    }

    #[test]
    fn episodes_are_deterministic() {
        let cfg = RenderConfig::default();
        let task = TaskSpec::pushpull();
        let budget = task.step_budget(pos(9, 2)).unwrap();
        let mut b1 = oracle_bundle(&task, &cfg).unwrap();
        let mut b2 = oracle_bundle(&task, &cfg).unwrap();
        let t1 = run_episode(&task, &cfg, pos(9, 2), &mut b1, PolicyMode::SequenceFed, budget)
            .unwrap();
        let t2 = run_episode(&task, &cfg, pos(9, 2), &mut b2, PolicyMode::SequenceFed, budget)
            .unwrap();
        assert_eq!(t1.visited, t2.visited);
        assert_eq!(t1.actions, t2.actions);
        assert_eq!(t1.step_errors, t2.step_errors);
    }

    #[test]
    fn deviation_counts_extra_steps() {
        // A wrong move plus its correction costs two steps.
        let task = TaskSpec::movetopos();
        let traj = Trajectory {
            start: pos(12, 8),
            visited: vec![pos(12, 8), pos(12, 7), pos(12, 8), pos(13, 8), pos(14, 8)],
            actions: vec![Action::Down, Action::Up, Action::Right, Action::Right],
            step_errors: vec![[0.0; 4]; 4],
            expert_predictions: Vec::new(),
            outcome: Outcome::ReachedGoal { steps: 4 },
        };
        assert_eq!(deviation(&traj, &task).unwrap(), Some(2));
    }

    #[test]
    fn trajectory_validation_catches_dynamics_violations() {
        let bad = Trajectory {
            start: pos(0, 0),
            visited: vec![pos(0, 0), pos(5, 5)],
            actions: vec![Action::Up],
            step_errors: vec![[0.0; 4]],
            expert_predictions: vec![Frame::filled(1, 1, [0, 0, 0])],
            outcome: Outcome::Timeout,
        };
        assert!(bad.validate().is_err());
    }
}
