//! Motion observed in task demonstrations: which way the object moved at
//! each demonstrated cell.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{DemoLabel, Demonstration};
use crate::grid::{step, Action, GridPos};

use super::PredictError;

/// Map from demonstrated cell to the expert's observed move there.
///
/// Built exclusively from consecutive state pairs; it never sees the task
/// spec, so exactly the non-terminal demonstrated cells are covered.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<FieldEntry>", into = "Vec<FieldEntry>")]
pub struct MotionField {
    entries: BTreeMap<GridPos, Action>,
}

#[derive(Serialize, Deserialize)]
struct FieldEntry {
    pos: GridPos,
    action: Action,
}

impl MotionField {
    /// Record the move between every consecutive state pair. Demos must
    /// all carry the same task label; conflicting moves for one cell and
    /// zero-length transitions are errors.
    pub fn from_demos(demos: &[Demonstration]) -> Result<Self, PredictError> {
        let mut label: Option<DemoLabel> = None;
        let mut entries = BTreeMap::new();
        for demo in demos {
            match (label, demo.label) {
                (None, l @ DemoLabel::Task(_)) => label = Some(l),
                (None, DemoLabel::Primitive(a)) => {
                    return Err(PredictError::MixedLabels(format!(
                        "primitive demo for {a}"
                    )))
                }
                (Some(expect), got) if expect != got => {
                    return Err(PredictError::MixedLabels(format!(
                        "{expect:?} mixed with {got:?}"
                    )))
                }
                _ => {}
            }
            for pair in demo.states.windows(2) {
                let (from, to) = (pair[0], pair[1]);
                if from == to {
                    return Err(PredictError::AmbiguousTransition { pos: from });
                }
                let action = Action::ALL
                    .into_iter()
                    .find(|&a| step(from, a) == to)
                    .expect("validated demos move one cell at a time");
                match entries.get(&from) {
                    None => {
                        entries.insert(from, action);
                    }
                    Some(&existing) if existing == action => {}
                    Some(&existing) => {
                        return Err(PredictError::FieldConflict {
                            pos: from,
                            a: existing,
                            b: action,
                        })
                    }
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, pos: GridPos) -> Option<Action> {
        self.entries.get(&pos).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (GridPos, Action)> + '_ {
        self.entries.iter().map(|(&p, &a)| (p, a))
    }

    /// The move for `pos`: its own entry if demonstrated, otherwise the
    /// entry of the nearest demonstrated cell by L1 distance. Ties prefer
    /// the earliest action in canonical order, then the lowest (y, x)
    /// cell.
    pub fn nearest_action(&self, pos: GridPos) -> Result<Action, PredictError> {
        if self.entries.is_empty() {
            return Err(PredictError::EmptyField);
        }
        if let Some(action) = self.get(pos) {
            return Ok(action);
        }
        let mut best: Option<(u32, usize, (u8, u8), Action)> = None;
        for (cell, action) in self.iter() {
            let d = (cell.x() as i32 - pos.x() as i32).unsigned_abs()
                + (cell.y() as i32 - pos.y() as i32).unsigned_abs();
            let key = (d, action.index(), (cell.y(), cell.x()), action);
            if best.map_or(true, |b| (key.0, key.1, key.2) < (b.0, b.1, b.2)) {
                best = Some(key);
            }
        }
        Ok(best.expect("field is non-empty").3)
    }
}

impl From<MotionField> for Vec<FieldEntry> {
    fn from(field: MotionField) -> Self {
        field
            .entries
            .into_iter()
            .map(|(pos, action)| FieldEntry { pos, action })
            .collect()
    }
}

impl TryFrom<Vec<FieldEntry>> for MotionField {
    type Error = String;

    fn try_from(entries: Vec<FieldEntry>) -> Result<Self, String> {
        let mut map = BTreeMap::new();
        for e in entries {
            if let Some(prev) = map.insert(e.pos, e.action) {
                if prev != e.action {
                    return Err(format!("conflicting entries for {}", e.pos));
                }
            }
        }
        Ok(Self { entries: map })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DemoRole, Demonstration};
    use crate::grid::{TaskId, TaskSpec};
    use crate::render::{render, RenderConfig};

    fn pos(x: u8, y: u8) -> GridPos {
        GridPos::new(x, y).unwrap()
    }

    fn demo_from_states(states: Vec<GridPos>) -> Demonstration {
        let cfg = RenderConfig::default();
        let frames = states.iter().map(|&p| render(p, &cfg, false)).collect();
        Demonstration {
            label: DemoLabel::Task(TaskId::MoveToPos),
            role: DemoRole::Train,
            arm_visible: false,
            states,
            frames,
        }
    }

    #[test]
    fn records_pairwise_moves() {
        let demo = demo_from_states(vec![pos(12, 8), pos(13, 8), pos(14, 8)]);
        let field = MotionField::from_demos(&[demo]).unwrap();
        assert_eq!(field.len(), 2);
        assert_eq!(field.get(pos(12, 8)), Some(Action::Right));
        assert_eq!(field.get(pos(13, 8)), Some(Action::Right));
        assert_eq!(field.get(pos(14, 8)), None);
    }

    #[test]
    fn empty_demo_list_gives_empty_field() {
        let field = MotionField::from_demos(&[]).unwrap();
        assert!(field.is_empty());
        assert!(matches!(
            field.nearest_action(pos(0, 0)),
            Err(PredictError::EmptyField)
        ));
    }

    #[test]
    fn conflicting_moves_are_an_error() {
        let a = demo_from_states(vec![pos(5, 5), pos(6, 5)]);
        let b = demo_from_states(vec![pos(5, 5), pos(5, 6)]);
        assert!(matches!(
            MotionField::from_demos(&[a, b]),
            Err(PredictError::FieldConflict { .. })
        ));
    }

    #[test]
    fn primitive_demos_are_rejected() {
        let cfg = RenderConfig::default();
        let demo = Demonstration::generate_primitive(Action::Up, pos(3, 0), &cfg).unwrap();
        assert!(matches!(
            MotionField::from_demos(&[demo]),
            Err(PredictError::MixedLabels(_))
        ));
    }

    #[test]
    fn nearest_rule_follows_spec_example() {
        // Rows 0 and 2 demonstrated moving left; a query at (5, 1) sits one
        // cell from both, and both tied cells agree on left.
        let cfg = RenderConfig::default();
        let task = TaskSpec::pushpull();
        let demos: Vec<Demonstration> = [pos(14, 0), pos(14, 2), pos(0, 6), pos(0, 8)]
            .into_iter()
            .map(|s| Demonstration::generate_expert(&task, s, DemoRole::Train, &cfg).unwrap())
            .collect();
        let field = MotionField::from_demos(&demos).unwrap();
        assert_eq!(field.nearest_action(pos(5, 1)).unwrap(), Action::Left);
        assert_eq!(field.nearest_action(pos(5, 7)).unwrap(), Action::Right);
    }

    #[test]
    fn tie_break_prefers_canonical_action_then_low_cell() {
        let up = demo_from_states(vec![pos(4, 4), pos(4, 5)]);
        let right = demo_from_states(vec![pos(6, 4), pos(7, 4)]);
        let field = MotionField::from_demos(&[right.clone(), up]).unwrap();
        // (5, 4) is distance 1 from both entries; up precedes right.
        assert_eq!(field.nearest_action(pos(5, 4)).unwrap(), Action::Up);

        let left = demo_from_states(vec![pos(4, 4), pos(3, 4)]);
        let field = MotionField::from_demos(&[right, left]).unwrap();
        // Left precedes right in canonical order.
        assert_eq!(field.nearest_action(pos(5, 4)).unwrap(), Action::Left);
    }

    #[test]
    fn serde_round_trip() {
        let demo = demo_from_states(vec![pos(12, 8), pos(13, 8), pos(14, 8)]);
        let field = MotionField::from_demos(&[demo]).unwrap();
        let json = serde_json::to_string(&field).unwrap();
        let back: MotionField = serde_json::from_str(&json).unwrap();
        assert_eq!(back, field);
    }
}
