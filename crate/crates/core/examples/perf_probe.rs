//! Scratch micro-profile of one training batch (dev only).

use ndarray::linalg::general_mat_mul;
use ndarray::Array2;
use std::time::Instant;

use mimic_core::dataset::{generate_dataset, split_by_role, DemoLabel, DemoPlan};
use mimic_core::grid::TaskId;
use mimic_core::predict::neural::{batch_loss, batch_loss_and_grad, train, TrainConfig};
use mimic_core::render::RenderConfig;

fn main() {
    if std::env::args().nth(1).as_deref() == Some("gemm") {
        gemm_probe();
        return;
    }
    let cfg = RenderConfig::default();
    let plan = DemoPlan::default_for(TaskId::MoveToPos);
    let demos = generate_dataset(&plan, &cfg).unwrap();
    let (etrain, eval_) = split_by_role(&demos, DemoLabel::Task(TaskId::MoveToPos));

    // One quick epoch to get weights.
    let tc = TrainConfig {
        sequences_per_epoch: 4,
        max_epochs: 1,
        patience: None,
        ..TrainConfig::default()
    };
    let out = train(&etrain, &eval_, &tc).unwrap();
    let weights = out.weights;

    // A batch of 4 length-5 windows.
    let windows: Vec<Vec<mimic_core::render::Frame>> = (0..4)
        .map(|k| etrain[0].frames[k..k + 5].to_vec())
        .collect();

    let t = Instant::now();
    let reps = 20;
    for _ in 0..reps {
        let _ = batch_loss(&weights, &windows).unwrap();
    }
    println!("forward only: {:.1} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let t = Instant::now();
    for _ in 0..reps {
        let _ = batch_loss_and_grad(&weights, &windows).unwrap();
    }
    println!(
        "forward+backward: {:.1} ms",
        t.elapsed().as_secs_f64() * 1e3 / reps as f64
    );

    mimic_core::predict::neural::profile_batch(&weights, &windows);

    // Adam-ish update cost.
    let n = weights.params().len();
    let mut m = vec![0.0f64; n];
    let mut v = vec![0.0f64; n];
    let mut p = weights.params().to_vec();
    let g = vec![1e-6f64; n];
    let t = Instant::now();
    for _ in 0..reps {
        for i in 0..n {
            m[i] = 0.9 * m[i] + 0.1 * g[i];
            v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
            p[i] -= 1e-3 * (m[i] / 0.5) / ((v[i] / 0.5).sqrt() + 1e-8);
        }
    }
    println!("adam-like: {:.1} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);
    std::hint::black_box(&p);
}

fn gemm_probe() {
    let b = 4;
    let feat = 2160;
    let hidden = 256;
    let f = Array2::<f64>::from_elem((b, feat), 0.5);
    let w = Array2::<f64>::from_elem((hidden, feat), 0.01);
    let mut h = Array2::<f64>::zeros((b, hidden));
    let reps = 2000;
    let t = Instant::now();
    for _ in 0..reps {
        general_mat_mul(1.0, &f, &w.t(), 0.0, &mut h);
    }
    let dt = t.elapsed().as_secs_f64() / reps as f64;
    let flops = 2.0 * b as f64 * feat as f64 * hidden as f64;
    println!(
        "gemm [4x2160]*[2160x256]: {:.3} ms, {:.2} Gflop/s",
        dt * 1e3,
        flops / dt / 1e9
    );

    let dpre = Array2::<f64>::from_elem((b, hidden), 0.1);
    let mut dw = Array2::<f64>::zeros((hidden, feat));
    let t = Instant::now();
    for _ in 0..reps {
        general_mat_mul(1.0, &dpre.t(), &f, 1.0, &mut dw);
    }
    let dt = t.elapsed().as_secs_f64() / reps as f64;
    println!(
        "gemm [256x4]*[4x2160] +=: {:.3} ms, {:.2} Gflop/s",
        dt * 1e3,
        flops / dt / 1e9
    );

    let a = Array2::<f64>::from_elem((512, 512), 0.5);
    let bm = Array2::<f64>::from_elem((512, 512), 0.5);
    let mut c = Array2::<f64>::zeros((512, 512));
    let t = Instant::now();
    for _ in 0..100 {
        general_mat_mul(1.0, &a, &bm, 0.0, &mut c);
    }
    let dt = t.elapsed().as_secs_f64() / 100.0;
    println!(
        "gemm 512^3: {:.3} ms, {:.2} Gflop/s",
        dt * 1e3,
        2.0 * 512f64.powi(3) / dt / 1e9
    );
}
