//! Scratch probe for training speed and convergence (dev only).

use std::sync::Arc;
use std::time::Instant;

use mimic_core::dataset::{generate_dataset, split_by_role, DemoLabel, DemoPlan};
use mimic_core::grid::{Action, TaskId, TaskSpec};
use mimic_core::policy::{select_action, PolicyMode};
use mimic_core::predict::neural::{train, TrainConfig};
use mimic_core::predict::{ExpertPredictor, NeuralAction, NeuralExpert};
use mimic_core::render::RenderConfig;

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "overfit".into());
    let cfg = RenderConfig::default();
    match mode.as_str() {
        "overfit" => {
            // Single 5-frame sequence, 2000 Adam steps (batch 1, 4/epoch, 500 epochs).
            let plan = DemoPlan::default_for(TaskId::MoveToPos);
            let demos = generate_dataset(&plan, &cfg).unwrap();
            let demo = demos
                .iter()
                .find(|d| d.label == DemoLabel::Task(TaskId::MoveToPos))
                .unwrap();
            let mut short = demo.clone();
            short.states.truncate(5);
            short.frames.truncate(5);
            let tc = TrainConfig {
                batch_size: 1,
                sequences_per_epoch: 4,
                max_epochs: 500,
                patience: None,
                seed: 7,
                ..TrainConfig::default()
            };
            let t0 = Instant::now();
            let out = train(&[&short], &[&short], &tc).unwrap();
            let last = out.log.last().unwrap();
            println!(
                "overfit: {} epochs ({} steps), {:.1}s, final train {:.3e}, best val {:.3e}",
                out.log.len(),
                out.log.len() * 4,
                t0.elapsed().as_secs_f64(),
                last.train_mse,
                out.best_val_mse
            );
        }
        "full" => {
            let task_id = TaskId::MoveToPos;
            let plan = DemoPlan::default_for(task_id);
            let demos = generate_dataset(&plan, &cfg).unwrap();
            let t0 = Instant::now();

            let (etrain, eval_) = split_by_role(&demos, DemoLabel::Task(task_id));
            let tc = TrainConfig {
                seed: 1,
                ..TrainConfig::default()
            };
            let expert_out = train(&etrain, &eval_, &tc).unwrap();
            println!(
                "expert: {} epochs, best val {:.3e} at {}, {:.1}s",
                expert_out.log.len(),
                expert_out.best_val_mse,
                expert_out.best_epoch,
                t0.elapsed().as_secs_f64()
            );

            let mut action_weights = Vec::new();
            for action in Action::ALL {
                let t1 = Instant::now();
                let (atrain, aval) = split_by_role(&demos, DemoLabel::Primitive(action));
                let aval = if aval.is_empty() { atrain.clone() } else { aval };
                let tc = TrainConfig {
                    seed: 2 + action.index() as u64,
                    ..TrainConfig::default()
                };
                let out = train(&atrain, &aval, &tc).unwrap();
                let crossing = |th: f64| {
                    out.log
                        .iter()
                        .find(|e| e.val_mse < th)
                        .map(|e| e.epoch as i64)
                        .unwrap_or(-1)
                };
                println!(
                    "{}: {} epochs, best val {:.3e} at {}, {:.1}s (cross 1e-4 @ {}, 1e-5 @ {}, 1e-6 @ {})",
                    action.name(),
                    out.log.len(),
                    out.best_val_mse,
                    out.best_epoch,
                    t1.elapsed().as_secs_f64(),
                    crossing(1e-4),
                    crossing(1e-5),
                    crossing(1e-6)
                );
                action_weights.push(Arc::new(out.weights));
            }
            println!("total wall: {:.1}s", t0.elapsed().as_secs_f64());

            // Behavioral check: on training-demo states, does select_action
            // match the demonstrated move?
            let task = TaskSpec::new(task_id);
            let expert_w = Arc::new(expert_out.weights);
            let mut agree = 0usize;
            let mut total = 0usize;
            let (etrain, _) = split_by_role(&demos, DemoLabel::Task(task_id));
            for demo in &etrain {
                let mut expert = NeuralExpert::new(expert_w.clone());
                for i in 0..demo.states.len() - 1 {
                    let history = &demo.frames[..=i];
                    let expert_pred = expert.predict_next(history).unwrap();
                    let mut preds = Vec::new();
                    for aw in &action_weights {
                        let ap = NeuralAction::new(aw.clone());
                        preds.push(
                            mimic_core::predict::ActionPredictor::predict(&ap, &demo.frames[i])
                                .unwrap(),
                        );
                    }
                    let preds: [mimic_core::render::Frame; 4] = preds.try_into().unwrap();
                    let (chosen, _) = select_action(&expert_pred, &preds).unwrap();
                    let demonstrated = task.expert_action(demo.states[i]).unwrap().unwrap();
                    total += 1;
                    if chosen == demonstrated {
                        agree += 1;
                    }
                }
            }
            println!(
                "agreement on training states: {}/{} = {:.1}% (mode {:?})",
                agree,
                total,
                100.0 * agree as f64 / total as f64,
                PolicyMode::SequenceFed
            );
        }
        other => eprintln!("unknown probe {other}"),
    }
}
