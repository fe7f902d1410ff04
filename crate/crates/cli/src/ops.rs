//! Command bodies.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::anyhow;

use mimic_core::dataset::{
    generate_dataset, load_dataset, save_dataset, split_by_role, DemoLabel, Demonstration,
};
use mimic_core::eval::{format_summary, render_strip, sweep, write_report_csv};
use mimic_core::grid::{Action, GridPos, TaskSpec};
use mimic_core::policy::{run_episode, Outcome, PolicyMode};
use mimic_core::ppm;
use mimic_core::predict::neural::{train as train_net, train_log_csv, NeuralWeights, TrainError};
use mimic_core::predict::oracle::FrameIndex;
use mimic_core::predict::{
    ActionPredictor, AnalyticAction, AnalyticExpert, ExpertPredictor, MotionField, NeuralAction,
    NeuralExpert, OracleAction, OracleExpert, PredictError, PredictorBundle, PredictorKind,
};
use mimic_core::render::RenderConfig;

use crate::config::RunConfig;
use crate::CliError;

pub fn demo_gen(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let plan = cfg.plan();
    let demos = generate_dataset(&plan, &cfg.render)
        .map_err(|e| CliError::Config(anyhow!(e).context("demonstration generation failed")))?;
    let manifest = save_dataset(&demos, &cfg.render, cfg.seed, out)
        .map_err(|e| CliError::Io(anyhow!(e).context("cannot write dataset")))?;
    let tasks = demos
        .iter()
        .filter(|d| matches!(d.label, DemoLabel::Task(_)))
        .count();
    println!(
        "wrote {} demonstrations ({} task, {} primitive) to {}",
        demos.len(),
        tasks,
        demos.len() - tasks,
        manifest.display()
    );
    Ok(())
}

fn load_demos(cfg: &RunConfig, data: &Path) -> Result<Vec<Demonstration>, CliError> {
    let manifest = data.join("manifest.json");
    let (stored, demos) = load_dataset(&manifest)
        .map_err(|e| CliError::Io(anyhow!(e).context("cannot load dataset")))?;
    if stored.render_config != cfg.render {
        return Err(CliError::Config(anyhow!(
            "dataset was rendered with a different render config"
        )));
    }
    if !demos
        .iter()
        .any(|d| d.label == DemoLabel::Task(cfg.task))
    {
        return Err(CliError::Config(anyhow!(
            "dataset has no demonstrations for task {}",
            cfg.task
        )));
    }
    Ok(demos)
}

fn weight_file(dir: &Path, role: &str) -> PathBuf {
    dir.join(format!("{role}.nnw"))
}

fn log_file(dir: &Path, role: &str) -> PathBuf {
    dir.join(format!("{role}_train_log.csv"))
}

pub fn train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<(), CliError> {
    let demos = load_demos(cfg, data)?;
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Io(anyhow!(e).context("cannot create output directory")))?;

    let mut wrote_anything = false;
    match cfg.predictors.expert {
        PredictorKind::Neural => {
            let (train_demos, val_demos) = split_by_role(&demos, DemoLabel::Task(cfg.task));
            let outcome = run_training(&train_demos, &val_demos, cfg, 0)?;
            write_artifacts(out, "expert", &outcome.weights, &outcome.log)?;
            println!(
                "expert: {} epochs, best validation mse {:e} (epoch {})",
                outcome.log.len(),
                outcome.best_val_mse,
                outcome.best_epoch
            );
            wrote_anything = true;
        }
        PredictorKind::Analytic => {
            // The motion field uses every recorded task demonstration;
            // the train/validation split only matters for neural nets.
            let task_demos: Vec<Demonstration> = demos
                .iter()
                .filter(|d| d.label == DemoLabel::Task(cfg.task))
                .cloned()
                .collect();
            let field = MotionField::from_demos(&task_demos)
                .map_err(|e| CliError::Config(anyhow!(e).context("cannot build motion field")))?;
            let json = serde_json::to_string_pretty(&field)
                .map_err(|e| CliError::Io(anyhow!(e)))?;
            std::fs::write(out.join("motion_field.json"), json + "\n")
                .map_err(|e| CliError::Io(anyhow!(e).context("cannot write motion field")))?;
            println!("wrote motion field ({} cells)", field.len());
            wrote_anything = true;
        }
        PredictorKind::Oracle => {
            println!("expert kind is oracle: nothing to train");
        }
    }

    match cfg.predictors.actions {
        PredictorKind::Neural => {
            for (i, action) in Action::ALL.into_iter().enumerate() {
                let (train_demos, val_demos) =
                    split_by_role(&demos, DemoLabel::Primitive(action));
                let outcome = run_training(&train_demos, &val_demos, cfg, 1 + i as u64)?;
                write_artifacts(out, action.name(), &outcome.weights, &outcome.log)?;
                println!(
                    "{}: {} epochs, best validation mse {:e} (epoch {})",
                    action.name(),
                    outcome.log.len(),
                    outcome.best_val_mse,
                    outcome.best_epoch
                );
            }
            wrote_anything = true;
        }
        PredictorKind::Analytic => {
            println!("action kind is analytic: predictions derive from the render config");
        }
        PredictorKind::Oracle => {
            println!("action kind is oracle: nothing to train");
        }
    }
    if !wrote_anything {
        println!("no artifacts to write for this predictor configuration");
    }
    Ok(())
}

fn run_training(
    train_demos: &[&Demonstration],
    val_demos: &[&Demonstration],
    cfg: &RunConfig,
    seed_offset: u64,
) -> Result<mimic_core::predict::TrainOutcome, CliError> {
    // Primitives record no validation sweeps; fall back to scoring the
    // training sequences so the keep-best rule still has a signal.
    let val: Vec<&Demonstration> = if val_demos.is_empty() {
        train_demos.to_vec()
    } else {
        val_demos.to_vec()
    };
    let tc = cfg.train_for(seed_offset);
    train_net(train_demos, &val, &tc).map_err(|e| match e {
        TrainError::NonFinite { .. } => CliError::Training(anyhow!(e)),
        other => CliError::Config(anyhow!(other).context("training setup failed")),
    })
}

fn write_artifacts(
    out: &Path,
    role: &str,
    weights: &NeuralWeights,
    log: &[mimic_core::predict::neural::EpochLog],
) -> Result<(), CliError> {
    weights
        .save(&weight_file(out, role))
        .map_err(|e| CliError::Io(anyhow!(e).context("cannot write weights")))?;
    std::fs::write(log_file(out, role), train_log_csv(log))
        .map_err(|e| CliError::Io(anyhow!(e).context("cannot write training log")))?;
    Ok(())
}

/// Everything needed to mint predictor bundles, loaded once.
struct LoadedModels {
    task: TaskSpec,
    render: RenderConfig,
    expert_kind: PredictorKind,
    action_kind: PredictorKind,
    field: Option<MotionField>,
    expert_weights: Option<Arc<NeuralWeights>>,
    action_weights: Option<[Arc<NeuralWeights>; 4]>,
    oracle_index: Option<Arc<FrameIndex>>,
}

impl LoadedModels {
    fn load(cfg: &RunConfig, models: &Path) -> Result<Self, CliError> {
        let expert_kind = cfg.predictors.expert;
        let action_kind = cfg.predictors.actions;

        let field = if expert_kind == PredictorKind::Analytic {
            let path = models.join("motion_field.json");
            let text = std::fs::read_to_string(&path).map_err(|e| {
                CliError::ModelLoad(
                    anyhow!(e).context(format!("cannot read {}", path.display())),
                )
            })?;
            let field: MotionField = serde_json::from_str(&text).map_err(|e| {
                CliError::ModelLoad(anyhow!(e).context("malformed motion field"))
            })?;
            Some(field)
        } else {
            None
        };

        let load_weights = |role: &str| -> Result<Arc<NeuralWeights>, CliError> {
            NeuralWeights::load(&weight_file(models, role))
                .map(Arc::new)
                .map_err(|e| {
                    CliError::ModelLoad(anyhow!(e).context(format!("cannot load {role} weights")))
                })
        };
        let expert_weights = if expert_kind == PredictorKind::Neural {
            Some(load_weights("expert")?)
        } else {
            None
        };
        let action_weights = if action_kind == PredictorKind::Neural {
            let mut ws = Vec::with_capacity(4);
            for action in Action::ALL {
                ws.push(load_weights(action.name())?);
            }
            Some(<[Arc<NeuralWeights>; 4]>::try_from(ws).expect("four actions"))
        } else {
            None
        };

        let oracle_index = if expert_kind == PredictorKind::Oracle
            || action_kind == PredictorKind::Oracle
        {
            Some(Arc::new(FrameIndex::new(cfg.render)))
        } else {
            None
        };

        Ok(Self {
            task: TaskSpec::new(cfg.task),
            render: cfg.render,
            expert_kind,
            action_kind,
            field,
            expert_weights,
            action_weights,
            oracle_index,
        })
    }

    fn bundle(&self) -> Result<PredictorBundle, PredictError> {
        let expert: Box<dyn ExpertPredictor> = match self.expert_kind {
            PredictorKind::Oracle => Box::new(OracleExpert::with_index(
                self.task,
                self.render,
                self.oracle_index.clone().expect("index built for oracle"),
            )),
            PredictorKind::Analytic => Box::new(AnalyticExpert::new(
                self.field.clone().expect("field loaded for analytic"),
                self.render,
            )),
            PredictorKind::Neural => Box::new(NeuralExpert::new(
                self.expert_weights.clone().expect("weights loaded"),
            )),
        };
        let actions = Action::ALL.map(|action| -> Box<dyn ActionPredictor> {
            match self.action_kind {
                PredictorKind::Oracle => Box::new(OracleAction::with_index(
                    action,
                    self.render,
                    self.oracle_index.clone().expect("index built for oracle"),
                )),
                PredictorKind::Analytic => Box::new(AnalyticAction::new(action, self.render)),
                PredictorKind::Neural => {
                    let ws = self.action_weights.as_ref().expect("weights loaded");
                    Box::new(NeuralAction::new(ws[action.index()].clone()))
                }
            }
        });
        PredictorBundle::new(expert, actions)
    }
}

pub fn eval(
    cfg: &RunConfig,
    models: &Path,
    report_path: &Path,
    mode: Option<PolicyMode>,
    jobs: Option<usize>,
) -> Result<(), CliError> {
    let loaded = LoadedModels::load(cfg, models)?;
    let mode = mode.unwrap_or(cfg.mode);
    let jobs = jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);

    let report = sweep(&loaded.task, &cfg.render, mode, || loaded.bundle(), jobs)
        .map_err(|e| CliError::Config(anyhow!(e).context("sweep failed")))?;
    write_report_csv(&report, report_path)
        .map_err(|e| CliError::Io(anyhow!(e).context("cannot write report")))?;
    print!("{}", format_summary(&report));
    println!("report: {}", report_path.display());
    Ok(())
}

fn parse_start(text: &str) -> Result<GridPos, CliError> {
    let parts: Vec<&str> = text.split(',').collect();
    let err = || CliError::Config(anyhow!("--start must be X,Y with X in 0..=14, Y in 0..=8"));
    if parts.len() != 2 {
        return Err(err());
    }
    let x: u8 = parts[0].trim().parse().map_err(|_| err())?;
    let y: u8 = parts[1].trim().parse().map_err(|_| err())?;
    GridPos::new(x, y).map_err(|e| CliError::Config(anyhow!(e)))
}

pub fn rollout(
    cfg: &RunConfig,
    models: &Path,
    start: &str,
    strip_path: &Path,
    errors_csv: Option<&Path>,
    mode: Option<PolicyMode>,
) -> Result<(), CliError> {
    let start = parse_start(start)?;
    let task = TaskSpec::new(cfg.task);
    if task.is_goal(start) {
        return Err(CliError::Config(anyhow!("start equals goal")));
    }
    if !task.is_eligible_start(start) {
        return Err(CliError::Config(anyhow!(
            "{start} is not an eligible start for {}",
            cfg.task
        )));
    }

    let loaded = LoadedModels::load(cfg, models)?;
    let mode = mode.unwrap_or(cfg.mode);
    let mut bundle = loaded
        .bundle()
        .map_err(|e| CliError::ModelLoad(anyhow!(e)))?;
    let budget = task
        .step_budget(start)
        .map_err(|e| CliError::Config(anyhow!(e)))?;
    let traj = run_episode(&task, &cfg.render, start, &mut bundle, mode, budget)
        .map_err(|e| CliError::Config(anyhow!(e).context("episode failed")))?;

    let strip = render_strip(&traj, &cfg.render)
        .map_err(|e| CliError::Config(anyhow!(e).context("cannot render strip")))?;
    std::fs::write(strip_path, ppm::encode(&strip))
        .map_err(|e| CliError::Io(anyhow!(e).context("cannot write strip")))?;

    let csv_path = errors_csv
        .map(PathBuf::from)
        .unwrap_or_else(|| strip_path.with_extension("csv"));
    let mut csv = String::from("step,chosen,err_up,err_down,err_left,err_right\n");
    for (i, (action, errors)) in traj.actions.iter().zip(&traj.step_errors).enumerate() {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            i, action, errors[0], errors[1], errors[2], errors[3]
        ));
    }
    std::fs::write(&csv_path, csv)
        .map_err(|e| CliError::Io(anyhow!(e).context("cannot write error csv")))?;

    match traj.outcome {
        Outcome::ReachedGoal { steps } => println!(
            "reached goal in {steps} steps (ground truth {})",
            task.ground_truth_path_length(start).unwrap_or(0)
        ),
        Outcome::Timeout => println!("timed out after {} steps", traj.actions.len()),
    }
    println!("strip: {}", strip_path.display());
    println!("errors: {}", csv_path.display());
    Ok(())
}
