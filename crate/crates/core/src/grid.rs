//! Discrete task space: grid positions, robot action primitives, task
//! definitions and the scripted expert policies used to generate
//! demonstrations and to judge success.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Grid width in cells.
pub const GRID_W: u8 = 15;
/// Grid height in cells.
pub const GRID_H: u8 = 9;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("position ({x}, {y}) is outside the {GRID_W}x{GRID_H} grid")]
    OutOfRange { x: i64, y: i64 },
    #[error("expert policy for {task} is undefined at {pos}")]
    ExpertUndefined { task: TaskId, pos: GridPos },
    #[error("{pos} is not an eligible start for {task}")]
    IneligibleStart { task: TaskId, pos: GridPos },
}

/// A cell of the task grid. The origin is the bottom-left corner: `x`
/// grows rightward, `y` grows upward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "(u8, u8)", into = "(u8, u8)")]
pub struct GridPos {
    x: u8,
    y: u8,
}

impl GridPos {
    pub fn new(x: u8, y: u8) -> Result<Self, GridError> {
        if x < GRID_W && y < GRID_H {
            Ok(Self { x, y })
        } else {
            Err(GridError::OutOfRange {
                x: x as i64,
                y: y as i64,
            })
        }
    }

    pub fn x(self) -> u8 {
        self.x
    }

    pub fn y(self) -> u8 {
        self.y
    }

    /// All 135 cells, bottom row first, left to right within a row.
    pub fn all() -> impl Iterator<Item = GridPos> {
        (0..GRID_H).flat_map(|y| (0..GRID_W).map(move |x| GridPos { x, y }))
    }
}

impl TryFrom<(u8, u8)> for GridPos {
    type Error = GridError;

    fn try_from((x, y): (u8, u8)) -> Result<Self, GridError> {
        GridPos::new(x, y)
    }
}

impl From<GridPos> for (u8, u8) {
    fn from(p: GridPos) -> (u8, u8) {
        (p.x, p.y)
    }
}

impl std::fmt::Display for GridPos {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// The four robot action primitives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    /// Canonical order. Every iteration over actions, and every tie-break,
    /// follows it.
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        match self {
            Action::Up => 0,
            Action::Down => 1,
            Action::Left => 2,
            Action::Right => 3,
        }
    }

    pub fn delta(self) -> (i8, i8) {
        match self {
            Action::Up => (0, 1),
            Action::Down => (0, -1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
        }
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Apply a 4-connected move. Moves that would exit the grid leave the
/// position unchanged.
pub fn step(pos: GridPos, action: Action) -> GridPos {
    let (dx, dy) = action.delta();
    let x = (pos.x as i16 + dx as i16).clamp(0, GRID_W as i16 - 1) as u8;
    let y = (pos.y as i16 + dy as i16).clamp(0, GRID_H as i16 - 1) as u8;
    GridPos { x, y }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskId {
    #[serde(rename = "pushpull")]
    PushPull,
    #[serde(rename = "movetopos")]
    MoveToPos,
}

impl TaskId {
    pub fn name(self) -> &'static str {
        match self {
            TaskId::PushPull => "pushpull",
            TaskId::MoveToPos => "movetopos",
        }
    }
}

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Extra steps allowed on top of the ground-truth path length before an
/// episode is declared a timeout.
pub const STEP_BUDGET_SLACK: usize = 30;

/// A task: goal predicate, eligible start set and scripted expert policy.
///
/// `pushpull` moves the object right in the upper half of the grid
/// (y >= 5, goal column 14) and left in the lower half (y <= 3, goal
/// column 0). The middle row y = 4 is excluded from the task. `movetopos`
/// moves the object right until column 14 and then up to the corner goal
/// (14, 8).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskSpec {
    id: TaskId,
}

impl TaskSpec {
    pub fn new(id: TaskId) -> Self {
        Self { id }
    }

    pub fn pushpull() -> Self {
        Self::new(TaskId::PushPull)
    }

    pub fn movetopos() -> Self {
        Self::new(TaskId::MoveToPos)
    }

    pub fn id(self) -> TaskId {
        self.id
    }

    pub fn is_goal(self, pos: GridPos) -> bool {
        match self.id {
            TaskId::PushPull => {
                (pos.y >= 5 && pos.x == GRID_W - 1) || (pos.y <= 3 && pos.x == 0)
            }
            TaskId::MoveToPos => pos.x == GRID_W - 1 && pos.y == GRID_H - 1,
        }
    }

    /// The expert's move at `pos`, or `None` at a goal state. Querying
    /// `pushpull` on the excluded middle row is a domain error.
    pub fn expert_action(self, pos: GridPos) -> Result<Option<Action>, GridError> {
        match self.id {
            TaskId::PushPull => {
                if pos.y == 4 {
                    return Err(GridError::ExpertUndefined {
                        task: self.id,
                        pos,
                    });
                }
                if self.is_goal(pos) {
                    Ok(None)
                } else if pos.y >= 5 {
                    Ok(Some(Action::Right))
                } else {
                    Ok(Some(Action::Left))
                }
            }
            TaskId::MoveToPos => {
                if pos.x < GRID_W - 1 {
                    Ok(Some(Action::Right))
                } else if pos.y < GRID_H - 1 {
                    Ok(Some(Action::Up))
                } else {
                    Ok(None)
                }
            }
        }
    }

    /// Every evaluated start cell, sorted bottom row first, then by column.
    /// Goal cells are excluded; for `pushpull` the middle row is too.
    pub fn start_states(self) -> Vec<GridPos> {
        GridPos::all()
            .filter(|&p| self.is_eligible_start(p))
            .collect()
    }

    pub fn is_eligible_start(self, pos: GridPos) -> bool {
        match self.id {
            TaskId::PushPull => pos.y != 4 && !self.is_goal(pos),
            TaskId::MoveToPos => !self.is_goal(pos),
        }
    }

    /// Number of expert moves from `start` to a goal.
    pub fn ground_truth_path_length(self, start: GridPos) -> Result<usize, GridError> {
        if !self.is_eligible_start(start) {
            return Err(GridError::IneligibleStart {
                task: self.id,
                pos: start,
            });
        }
        let mut pos = start;
        let mut steps = 0;
        while !self.is_goal(pos) {
            let action = self
                .expert_action(pos)?
                .expect("expert policy stalls only at goal states");
            pos = step(pos, action);
            steps += 1;
        }
        Ok(steps)
    }

    /// Per-episode step budget: ground-truth length plus a fixed slack.
    pub fn step_budget(self, start: GridPos) -> Result<usize, GridError> {
        Ok(self.ground_truth_path_length(start)? + STEP_BUDGET_SLACK)
    }
}
