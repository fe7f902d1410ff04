//! Full-sweep evaluation: run every start cell, aggregate success and
//! deviation statistics, relate first-state predictions to outcomes,
//! classify failures, and export reports. Also provides fault injection
//! to reproduce known failure shapes under controlled conditions.

use std::collections::BTreeSet;
use std::path::Path;

use thiserror::Error;

use crate::grid::{Action, GridError, GridPos, TaskId, TaskSpec};
use crate::policy::{deviation, run_episode, Outcome, PolicyError, PolicyMode, Trajectory};
use crate::predict::localize::localize_object;
use crate::predict::{ExpertPredictor, PredictError, PredictorBundle};
use crate::render::{blend_half, render, upscale_nearest, Frame, RenderConfig, RenderError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("report is internally inconsistent: {0}")]
    Inconsistent(String),
    #[error("failed to build predictors: {0}")]
    Bundle(#[from] PredictError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Failure taxonomy over failed trajectories, keyed by the first move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureType {
    /// First move was right although the expert's first move was not.
    TypeA,
    /// First move was up although the expert's first move was not.
    TypeB,
    Other,
}

impl FailureType {
    pub fn classify(first: Action, ground_truth: Action) -> Self {
        if first == Action::Right && ground_truth != Action::Right {
            FailureType::TypeA
        } else if first == Action::Up && ground_truth != Action::Up {
            FailureType::TypeB
        } else {
            FailureType::Other
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FailureType::TypeA => "type_a",
            FailureType::TypeB => "type_b",
            FailureType::Other => "other",
        }
    }
}

/// Outcome of the episode run from one start cell.
#[derive(Debug, Clone, PartialEq)]
pub struct StartRecord {
    pub start: GridPos,
    pub outcome: Outcome,
    pub steps: usize,
    pub deviation: Option<usize>,
    pub first_action: Action,
    /// Whether the first move matched the expert's move at the start.
    pub first_correct: bool,
    pub failure: Option<FailureType>,
}

/// Median/max/min of the nonzero deviations among successes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationStats {
    pub median: f64,
    pub max: usize,
    pub min: usize,
}

/// How first-state prediction correctness relates to success. The four
/// conditional percentages partition each outcome class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstStateSummary {
    pub correct_first_pct: f64,
    pub success_correct_first_pct: f64,
    pub success_incorrect_first_pct: f64,
    pub failure_correct_first_pct: f64,
    pub failure_incorrect_first_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregates {
    pub starts: usize,
    pub successes: usize,
    pub success_rate_pct: f64,
    /// Share of successes that matched the expert path exactly.
    pub no_deviation_pct_of_successes: f64,
    /// Same numerator over all starts; both denominators are reported.
    pub no_deviation_pct_of_all: f64,
    pub deviation: Option<DeviationStats>,
    pub first_state: FirstStateSummary,
    /// Counts of [TypeA, TypeB, Other] over failed trajectories.
    pub failure_counts: [usize; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub task: TaskId,
    pub mode: PolicyMode,
    pub records: Vec<StartRecord>,
    pub aggregates: Aggregates,
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

impl Aggregates {
    pub fn from_records(records: &[StartRecord]) -> Self {
        let starts = records.len();
        let successes = records.iter().filter(|r| r.outcome.reached_goal()).count();
        let failures = starts - successes;
        let no_dev = records.iter().filter(|r| r.deviation == Some(0)).count();

        let mut nonzero: Vec<usize> = records
            .iter()
            .filter_map(|r| r.deviation.filter(|&d| d > 0))
            .collect();
        nonzero.sort_unstable();
        let deviation = if nonzero.is_empty() {
            None
        } else {
            let n = nonzero.len();
            let median = if n % 2 == 1 {
                nonzero[n / 2] as f64
            } else {
                (nonzero[n / 2 - 1] + nonzero[n / 2]) as f64 / 2.0
            };
            Some(DeviationStats {
                median,
                max: nonzero[n - 1],
                min: nonzero[0],
            })
        };

        let correct_first = records.iter().filter(|r| r.first_correct).count();
        let success_correct = records
            .iter()
            .filter(|r| r.outcome.reached_goal() && r.first_correct)
            .count();
        let failure_correct = records
            .iter()
            .filter(|r| !r.outcome.reached_goal() && r.first_correct)
            .count();
        let first_state = FirstStateSummary {
            correct_first_pct: pct(correct_first, starts),
            success_correct_first_pct: pct(success_correct, successes),
            success_incorrect_first_pct: pct(successes - success_correct, successes),
            failure_correct_first_pct: pct(failure_correct, failures),
            failure_incorrect_first_pct: pct(failures - failure_correct, failures),
        };

        let mut failure_counts = [0usize; 3];
        for record in records {
            if let Some(f) = record.failure {
                let idx = match f {
                    FailureType::TypeA => 0,
                    FailureType::TypeB => 1,
                    FailureType::Other => 2,
                };
                failure_counts[idx] += 1;
            }
        }

        Self {
            starts,
            successes,
            success_rate_pct: pct(successes, starts),
            no_deviation_pct_of_successes: pct(no_dev, successes),
            no_deviation_pct_of_all: pct(no_dev, starts),
            deviation,
            first_state,
            failure_counts,
        }
    }
}

impl EvalReport {
    /// Recompute the aggregates from the records and compare.
    pub fn verify(&self) -> Result<(), EvalError> {
        let expected = TaskSpec::new(self.task).start_states().len();
        if self.records.len() != expected {
            return Err(EvalError::Inconsistent(format!(
                "{} records for {} starts",
                self.records.len(),
                expected
            )));
        }
        let recomputed = Aggregates::from_records(&self.records);
        if recomputed != self.aggregates {
            return Err(EvalError::Inconsistent(
                "stored aggregates differ from recomputation".into(),
            ));
        }
        let failures = self.aggregates.starts - self.aggregates.successes;
        if self.aggregates.failure_counts.iter().sum::<usize>() != failures {
            return Err(EvalError::Inconsistent(
                "failure counts do not partition the failures".into(),
            ));
        }
        Ok(())
    }
}

fn record_from_trajectory(
    task: &TaskSpec,
    traj: &Trajectory,
) -> Result<StartRecord, EvalError> {
    let first_action = *traj
        .actions
        .first()
        .expect("starts are never goals, so every episode moves at least once");
    let ground_truth_first = task
        .expert_action(traj.start)?
        .expect("start cells are not goal cells");
    let dev = deviation(traj, task)?;
    let failure = if traj.outcome.reached_goal() {
        None
    } else {
        Some(FailureType::classify(first_action, ground_truth_first))
    };
    Ok(StartRecord {
        start: traj.start,
        outcome: traj.outcome,
        steps: traj.actions.len(),
        deviation: dev,
        first_action,
        first_correct: first_action == ground_truth_first,
        failure,
    })
}

/// Run an episode from every start cell and aggregate. Episodes are
/// independent; with `jobs > 1` they run on a worker pool, and records
/// are always assembled in (row, column) start order.
pub fn sweep<F>(
    task: &TaskSpec,
    cfg: &RenderConfig,
    mode: PolicyMode,
    factory: F,
    jobs: usize,
) -> Result<EvalReport, EvalError>
where
    F: Fn() -> Result<PredictorBundle, PredictError> + Sync,
{
    let starts = task.start_states();
    let run_one = |start: &GridPos| -> Result<StartRecord, EvalError> {
        let mut bundle = factory()?;
        let budget = task.step_budget(*start)?;
        let traj = run_episode(task, cfg, *start, &mut bundle, mode, budget)?;
        record_from_trajectory(task, &traj)
    };

    let records: Vec<StartRecord> = if jobs > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| EvalError::Inconsistent(format!("worker pool: {e}")))?;
        pool.install(|| starts.par_iter().map(run_one).collect::<Result<_, _>>())?
    } else {
        let mut bundle = factory()?;
        let mut out = Vec::with_capacity(starts.len());
        for start in &starts {
            let budget = task.step_budget(*start)?;
            let traj = run_episode(task, cfg, *start, &mut bundle, mode, budget)?;
            out.push(record_from_trajectory(task, &traj)?);
        }
        out
    };

    let aggregates = Aggregates::from_records(&records);
    let report = EvalReport {
        task: task.id(),
        mode,
        records,
        aggregates,
    };
    report.verify()?;
    Ok(report)
}

/// Recompute the first-state block from the records.
pub fn first_state_analysis(report: &EvalReport) -> FirstStateSummary {
    Aggregates::from_records(&report.records).first_state
}

/// Recompute failure-type counts from the records.
pub fn classify_failures(report: &EvalReport) -> [usize; 3] {
    Aggregates::from_records(&report.records).failure_counts
}

fn fmt_opt_usize(v: Option<usize>) -> String {
    v.map(|d| d.to_string()).unwrap_or_default()
}

/// Render the report as CSV: a header, one row per start, then an
/// aggregate block of `# name,value` rows. Formatting is fixed so equal
/// reports serialize byte-identically.
pub fn report_csv(report: &EvalReport) -> String {
    let mut out = String::from(
        "task,mode,start_x,start_y,outcome,steps,deviation,first_action,first_correct,failure_type\n",
    );
    for r in &report.records {
        let outcome = match r.outcome {
            Outcome::ReachedGoal { .. } => "reached_goal",
            Outcome::Timeout => "timeout",
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            report.task,
            report.mode,
            r.start.x(),
            r.start.y(),
            outcome,
            r.steps,
            fmt_opt_usize(r.deviation),
            r.first_action,
            r.first_correct,
            r.failure.map(|f| f.name()).unwrap_or(""),
        ));
    }
    let a = &report.aggregates;
    let dev = a.deviation;
    let rows: Vec<(&str, String)> = vec![
        ("starts", a.starts.to_string()),
        ("successes", a.successes.to_string()),
        ("success_rate_pct", format!("{:.1}", a.success_rate_pct)),
        (
            "no_deviation_pct_of_successes",
            format!("{:.1}", a.no_deviation_pct_of_successes),
        ),
        (
            "no_deviation_pct_of_all",
            format!("{:.1}", a.no_deviation_pct_of_all),
        ),
        (
            "deviation_median",
            dev.map(|d| format!("{:.1}", d.median)).unwrap_or_default(),
        ),
        (
            "deviation_max",
            dev.map(|d| d.max.to_string()).unwrap_or_default(),
        ),
        (
            "deviation_min",
            dev.map(|d| d.min.to_string()).unwrap_or_default(),
        ),
        (
            "first_state_correct_pct",
            format!("{:.1}", a.first_state.correct_first_pct),
        ),
        (
            "success_with_correct_first_pct",
            format!("{:.1}", a.first_state.success_correct_first_pct),
        ),
        (
            "success_with_incorrect_first_pct",
            format!("{:.1}", a.first_state.success_incorrect_first_pct),
        ),
        (
            "failure_with_correct_first_pct",
            format!("{:.1}", a.first_state.failure_correct_first_pct),
        ),
        (
            "failure_with_incorrect_first_pct",
            format!("{:.1}", a.first_state.failure_incorrect_first_pct),
        ),
        ("failures_type_a", a.failure_counts[0].to_string()),
        ("failures_type_b", a.failure_counts[1].to_string()),
        ("failures_other", a.failure_counts[2].to_string()),
    ];
    for (name, value) in rows {
        out.push_str(&format!("# {name},{value}\n"));
    }
    out
}

pub fn write_report_csv(report: &EvalReport, path: &Path) -> Result<(), EvalError> {
    std::fs::write(path, report_csv(report))?;
    Ok(())
}

/// Human-readable aggregate block for standard output.
pub fn format_summary(report: &EvalReport) -> String {
    let a = &report.aggregates;
    let mut s = String::new();
    s.push_str(&format!(
        "task: {}  mode: {}  starts: {}\n",
        report.task, report.mode, a.starts
    ));
    s.push_str(&format!(
        "successful trajectories: {}/{} ({:.1}%)\n",
        a.successes, a.starts, a.success_rate_pct
    ));
    s.push_str(&format!(
        "successes with no deviation: {:.1}% of successes, {:.1}% of all starts\n",
        a.no_deviation_pct_of_successes, a.no_deviation_pct_of_all
    ));
    match a.deviation {
        Some(d) => s.push_str(&format!(
            "deviation steps among deviating successes: median {:.1}, max {}, min {}\n",
            d.median, d.max, d.min
        )),
        None => s.push_str("deviation steps among deviating successes: none\n"),
    }
    s.push_str(&format!(
        "correct first-state action predictions: {:.1}%\n",
        a.first_state.correct_first_pct
    ));
    s.push_str(&format!(
        "successful trajectories with correct first prediction: {:.1}%\n",
        a.first_state.success_correct_first_pct
    ));
    s.push_str(&format!(
        "successful trajectories with incorrect first prediction: {:.1}%\n",
        a.first_state.success_incorrect_first_pct
    ));
    s.push_str(&format!(
        "unsuccessful trajectories with correct first prediction: {:.1}%\n",
        a.first_state.failure_correct_first_pct
    ));
    s.push_str(&format!(
        "unsuccessful trajectories with incorrect first prediction: {:.1}%\n",
        a.first_state.failure_incorrect_first_pct
    ));
    s.push_str(&format!(
        "failure types: type_a {}, type_b {}, other {}\n",
        a.failure_counts[0], a.failure_counts[1], a.failure_counts[2]
    ));
    s
}

/// Horizontal strip of an episode: per step, the current frame with the
/// predicted expert frame blended in at 50%. Lower-resolution predictions
/// are upscaled nearest-neighbor first.
pub fn render_strip(
    traj: &Trajectory,
    cfg: &RenderConfig,
) -> Result<Frame, EvalError> {
    if traj.actions.is_empty() {
        return Err(EvalError::Inconsistent("trajectory has no steps".into()));
    }
    let mut tiles = Vec::with_capacity(traj.actions.len());
    for (i, pred) in traj.expert_predictions.iter().enumerate() {
        let base = render(traj.visited[i], cfg, false);
        let pred = if pred.dims() == base.dims() {
            pred.clone()
        } else if base.width() % pred.width() == 0 {
            upscale_nearest(pred, base.width() / pred.width())?
        } else {
            return Err(EvalError::Inconsistent(
                "prediction resolution does not divide frame resolution".into(),
            ));
        };
        tiles.push(blend_half(&base, &pred)?);
    }
    let (tile_w, tile_h) = tiles[0].dims();
    let total_w = tile_w * tiles.len() as u32;
    let mut data = Vec::with_capacity(total_w as usize * tile_h as usize * 3);
    for row in 0..tile_h {
        for tile in &tiles {
            let start = row as usize * tile_w as usize * 3;
            data.extend_from_slice(&tile.as_bytes()[start..start + tile_w as usize * 3]);
        }
    }
    Ok(Frame::new(total_w, tile_h, data)?)
}

/// Per-episode-resettable override of expert predictions.
pub trait FaultRule: Send {
    fn begin_episode(&mut self) {}

    /// Return a replacement prediction, or `None` to pass through.
    fn override_prediction(&mut self, current: &Frame, step: usize) -> Option<Frame>;
}

/// An expert predictor whose output a fault rule may replace.
pub struct FaultedExpert {
    inner: Box<dyn ExpertPredictor>,
    rule: Box<dyn FaultRule>,
    calls: usize,
}

impl ExpertPredictor for FaultedExpert {
    fn begin_episode(&mut self) {
        self.calls = 0;
        self.inner.begin_episode();
        self.rule.begin_episode();
    }

    fn predict_next(&mut self, history: &[Frame]) -> Result<Frame, PredictError> {
        let step = self.calls;
        self.calls += 1;
        let current = history.last().ok_or(PredictError::EmptyHistory)?;
        if let Some(frame) = self.rule.override_prediction(current, step) {
            return Ok(frame);
        }
        self.inner.predict_next(history)
    }

    fn output_dims(&self) -> (u32, u32) {
        self.inner.output_dims()
    }
}

/// Wrap the bundle's expert predictor with a fault rule.
pub fn inject_expert_fault(bundle: PredictorBundle, rule: Box<dyn FaultRule>) -> PredictorBundle {
    PredictorBundle {
        expert: Box::new(FaultedExpert {
            inner: bundle.expert,
            rule,
            calls: 0,
        }),
        actions: bundle.actions,
    }
}

/// Once per episode, when the object sits in `column` below the top row,
/// predict "no movement". The policy then burns one step on a clamped
/// move before the next (correct) prediction, delaying the upward turn
/// by exactly one step.
pub struct TransitionStallFault {
    cfg: RenderConfig,
    column: u8,
    fired: bool,
}

impl TransitionStallFault {
    pub fn new(cfg: RenderConfig, column: u8) -> Self {
        Self {
            cfg,
            column,
            fired: false,
        }
    }
}

impl FaultRule for TransitionStallFault {
    fn begin_episode(&mut self) {
        self.fired = false;
    }

    fn override_prediction(&mut self, current: &Frame, _step: usize) -> Option<Frame> {
        if self.fired {
            return None;
        }
        let pos = localize_object(current, &self.cfg).ok()?;
        if pos.x() == self.column && pos.y() < crate::grid::GRID_H - 1 {
            self.fired = true;
            Some(current.clone())
        } else {
            None
        }
    }
}

/// Whenever the object sits in one of `cells`, predict that it moves one
/// step in `direction`. Trajectories whose start lies in the set keep
/// following the wrong direction and time out.
pub struct ForcedMoveFault {
    cfg: RenderConfig,
    cells: BTreeSet<GridPos>,
    direction: Action,
}

impl ForcedMoveFault {
    pub fn new(cfg: RenderConfig, cells: BTreeSet<GridPos>, direction: Action) -> Self {
        Self {
            cfg,
            cells,
            direction,
        }
    }

    /// The cells (`from_x`..=`to_x`, `row`).
    ///
    /// For a rightward fault, a span reaching the right edge of a middle
    /// row traps exactly the starts inside it: the object marches right
    /// and then sits clamped at the edge, where the forced prediction
    /// still singles out right. Avoid the bottom and top corners, where
    /// a clamped right prediction ties with a clamped vertical move and
    /// canonical order picks the vertical one; and note that a span
    /// ending short of the edge also times out the starts beyond it,
    /// which bounce off the span with a correct first move.
    pub fn row_span(row: u8, from_x: u8, to_x: u8) -> BTreeSet<GridPos> {
        (from_x..=to_x)
            .map(|x| GridPos::new(x, row).expect("row and column are in range"))
            .collect()
    }
}

impl FaultRule for ForcedMoveFault {
    fn override_prediction(&mut self, current: &Frame, _step: usize) -> Option<Frame> {
        let pos = localize_object(current, &self.cfg).ok()?;
        if self.cells.contains(&pos) {
            Some(render(
                crate::grid::step(pos, self.direction),
                &self.cfg,
                false,
            ))
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyMode;
    use crate::predict::oracle::oracle_bundle;

    fn pos(x: u8, y: u8) -> GridPos {
        GridPos::new(x, y).unwrap()
    }

    fn oracle_sweep(task: &TaskSpec, mode: PolicyMode, jobs: usize) -> EvalReport {
        let cfg = RenderConfig::default();
        sweep(task, &cfg, mode, || oracle_bundle(task, &cfg), jobs).unwrap()
    }

    #[test]
    fn oracle_movetopos_sweep_is_perfect() {
        let task = TaskSpec::movetopos();
        let report = oracle_sweep(&task, PolicyMode::SequenceFed, 1);
        assert_eq!(report.records.len(), 134);
        assert_eq!(report.aggregates.successes, 134);
        assert_eq!(report.aggregates.success_rate_pct, 100.0);
        assert!(report.records.iter().all(|r| r.deviation == Some(0)));
        assert_eq!(report.aggregates.first_state.correct_first_pct, 100.0);
        assert_eq!(report.aggregates.deviation, None);
        report.verify().unwrap();
    }

    #[test]
    fn parallel_sweep_matches_sequential() {
        let task = TaskSpec::pushpull();
        let a = oracle_sweep(&task, PolicyMode::SingleImage, 1);
        let b = oracle_sweep(&task, PolicyMode::SingleImage, 3);
        assert_eq!(a, b);
    }

    #[test]
    fn sweep_is_ordered_by_row_then_column() {
        let task = TaskSpec::pushpull();
        let report = oracle_sweep(&task, PolicyMode::SequenceFed, 2);
        let starts: Vec<GridPos> = report.records.iter().map(|r| r.start).collect();
        assert_eq!(starts, task.start_states());
    }

    #[test]
    fn csv_has_records_plus_aggregate_rows() {
        let task = TaskSpec::movetopos();
        let report = oracle_sweep(&task, PolicyMode::SequenceFed, 1);
        let csv = report_csv(&report);
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        let aggregate_rows = lines.iter().filter(|l| l.starts_with("# ")).count();
        assert_eq!(lines.len(), 1 + report.records.len() + aggregate_rows);
        assert_eq!(aggregate_rows, 16);
        assert_eq!(report_csv(&report), csv, "export must be deterministic");
        assert!(csv.contains("# success_rate_pct,100.0"));
    }

    #[test]
    fn summary_mentions_success_rate() {
        let task = TaskSpec::movetopos();
        let report = oracle_sweep(&task, PolicyMode::SequenceFed, 1);
        let summary = format_summary(&report);
        assert!(summary.contains("100.0%"));
    }

    #[test]
    fn strip_is_steps_times_frame_width() {
        let cfg = RenderConfig::default();
        let task = TaskSpec::movetopos();
        let mut bundle = oracle_bundle(&task, &cfg).unwrap();
        let budget = task.step_budget(pos(11, 8)).unwrap();
        let traj = run_episode(
            &task,
            &cfg,
            pos(11, 8),
            &mut bundle,
            PolicyMode::SequenceFed,
            budget,
        )
        .unwrap();
        let strip = render_strip(&traj, &cfg).unwrap();
        assert_eq!(
            strip.dims(),
            (cfg.frame_width() * traj.actions.len() as u32, cfg.frame_height())
        );
    }

    #[test]
    fn noop_fault_changes_nothing() {
        struct Noop;
        impl FaultRule for Noop {
            fn override_prediction(&mut self, _: &Frame, _: usize) -> Option<Frame> {
                None
            }
        }
        let task = TaskSpec::movetopos();
        let cfg = RenderConfig::default();
        let clean = oracle_sweep(&task, PolicyMode::SequenceFed, 1);
        let faulted = sweep(
            &task,
            &cfg,
            PolicyMode::SequenceFed,
            || Ok(inject_expert_fault(oracle_bundle(&task, &cfg)?, Box::new(Noop))),
            1,
        )
        .unwrap();
        assert_eq!(clean, faulted);
    }

    #[test]
    fn transition_stall_delays_each_affected_start_by_one() {
        let task = TaskSpec::movetopos();
        let cfg = RenderConfig::default();
        let report = sweep(
            &task,
            &cfg,
            PolicyMode::SequenceFed,
            || {
                Ok(inject_expert_fault(
                    oracle_bundle(&task, &cfg)?,
                    Box::new(TransitionStallFault::new(cfg, 14)),
                ))
            },
            1,
        )
        .unwrap();
        assert_eq!(report.aggregates.successes, 134);
        let stats = report.aggregates.deviation.unwrap();
        assert_eq!((stats.median, stats.max, stats.min), (1.0, 1, 1));
        // Top-row starts never pass the transition and stay exact.
        for r in &report.records {
            let expected = if r.start.y() == 8 { Some(0) } else { Some(1) };
            assert_eq!(r.deviation, expected, "start {}", r.start);
        }
    }

    #[test]
    fn forced_right_fault_creates_exactly_one_type_a() {
        let task = TaskSpec::pushpull();
        let cfg = RenderConfig::default();
        let cells = ForcedMoveFault::row_span(1, 14, 14);
        let report = sweep(
            &task,
            &cfg,
            PolicyMode::SequenceFed,
            || {
                Ok(inject_expert_fault(
                    oracle_bundle(&task, &cfg)?,
                    Box::new(ForcedMoveFault::new(cfg, cells.clone(), Action::Right)),
                ))
            },
            1,
        )
        .unwrap();
        assert_eq!(report.aggregates.failure_counts, [1, 0, 0]);
        assert_eq!(report.aggregates.successes, 111);
        let failed: Vec<_> = report
            .records
            .iter()
            .filter(|r| !r.outcome.reached_goal())
            .collect();
        assert_eq!(failed.len(), 1);
        assert_eq!(failed[0].start, pos(14, 1));
        assert_eq!(failed[0].first_action, Action::Right);
        assert!(!failed[0].first_correct);
    }

    #[test]
    fn failure_counts_partition_failures() {
        let task = TaskSpec::pushpull();
        let cfg = RenderConfig::default();
        let mut cells = ForcedMoveFault::row_span(0, 10, 13);
        cells.extend(ForcedMoveFault::row_span(2, 12, 13));
        let report = sweep(
            &task,
            &cfg,
            PolicyMode::SequenceFed,
            || {
                Ok(inject_expert_fault(
                    oracle_bundle(&task, &cfg)?,
                    Box::new(ForcedMoveFault::new(cfg, cells.clone(), Action::Right)),
                ))
            },
            2,
        )
        .unwrap();
        // Starts inside the spans fail rightward; starts right of a span
        // oscillate on its edge and also fail, with a correct first move.
        let failures = report.aggregates.starts - report.aggregates.successes;
        assert_eq!(failures, 8);
        assert_eq!(
            report.aggregates.failure_counts.iter().sum::<usize>(),
            failures
        );
        assert_eq!(report.aggregates.failure_counts, [6, 0, 2]);
        report.verify().unwrap();
    }
}
