//! Seeded, single-threaded training loop: sampled fixed-length windows,
//! Adam updates, per-epoch validation, and a keep-the-best rule over
//! validation loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Demonstration;
use crate::render::{downsample, RenderError};

use super::adam::Adam;
use super::net::{backward_batch, forward_batch, frame_to_plane, Plane};
use super::weights::WeightsError;
use super::{ArchSpec, NeuralWeights};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("no training data: {0}")]
    NoData(String),
    #[error("a training window needs at least two frames")]
    ShortWindow,
    #[error("frame dimensions {got_w}x{got_h} do not fit network input {want_w}x{want_h}")]
    InputMismatch {
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
    #[error("invalid train config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
}

/// Training hyperparameters. The defaults are the protocol the whole
/// pipeline is tuned around: windows of five frames, batches of four
/// sequences, 64 sequences per epoch, at most 500 epochs, Adam at 1e-3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub sequence_len: usize,
    pub batch_size: usize,
    pub sequences_per_epoch: usize,
    pub max_epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Stop early after this many epochs without a validation
    /// improvement; `None` always runs to `max_epochs`.
    pub patience: Option<usize>,
    /// Block-downsampling applied to demonstration frames before they
    /// reach the network.
    pub downsample_factor: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sequence_len: 5,
            batch_size: 4,
            sequences_per_epoch: 64,
            max_epochs: 500,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            patience: Some(60),
            downsample_factor: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = [
            ("sequence_len", self.sequence_len),
            ("batch_size", self.batch_size),
            ("sequences_per_epoch", self.sequences_per_epoch),
            ("max_epochs", self.max_epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(TrainError::BadConfig(format!("{name} must be positive")));
            }
        }
        if self.sequence_len < 2 {
            return Err(TrainError::BadConfig(
                "sequence_len must be at least 2".into(),
            ));
        }
        if self.downsample_factor == 0 {
            return Err(TrainError::BadConfig(
                "downsample_factor must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::BadConfig("lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: NeuralWeights,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
}

/// Render the per-epoch log as `epoch,train_mse,val_mse` CSV.
pub fn train_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_mse,val_mse\n");
    for row in log {
        out.push_str(&format!("{},{},{}\n", row.epoch, row.train_mse, row.val_mse));
    }
    out
}

/// Initialize a flat parameter vector: uniform fan-based ranges for the
/// weights, zero biases, and the output bias at the logit of the mean
/// target so the first predictions already sit near the background.
pub(crate) fn init_params(arch: &ArchSpec, rng: &mut ChaCha8Rng, mean_rgb: [f64; 3]) -> Vec<f64> {
    let l = arch.layout();
    let feat = arch.feat_len() as f64;
    let hidden = ArchSpec::HIDDEN as f64;
    let mut params = vec![0.0; l.total];

    let mut fill = |range: std::ops::Range<usize>, limit: f64, params: &mut Vec<f64>| {
        for slot in &mut params[range] {
            *slot = (rng.gen::<f64>() * 2.0 - 1.0) * limit;
        }
    };
    fill(
        l.conv1_w.clone(),
        (6.0 / (ArchSpec::IN_CH as f64 * 9.0)).sqrt(),
        &mut params,
    );
    fill(
        l.conv2_w.clone(),
        (6.0 / (ArchSpec::C1 as f64 * 9.0)).sqrt(),
        &mut params,
    );
    fill(l.w_xh.clone(), (6.0 / (feat + hidden)).sqrt(), &mut params);
    fill(l.w_hh.clone(), (6.0 / (2.0 * hidden)).sqrt(), &mut params);
    fill(l.w_hf.clone(), (6.0 / (feat + hidden)).sqrt(), &mut params);
    fill(
        l.dec1_w.clone(),
        (6.0 / (ArchSpec::C2 as f64 * 9.0)).sqrt(),
        &mut params,
    );
    fill(
        l.dec2_w.clone(),
        (6.0 / (ArchSpec::C1 as f64 * 9.0 + ArchSpec::IN_CH as f64 * 9.0)).sqrt(),
        &mut params,
    );
    for (slot, m) in params[l.dec2_b.clone()].iter_mut().zip(mean_rgb) {
        let m = m.clamp(0.02, 0.98);
        *slot = (m / (1.0 - m)).ln();
    }
    params
}

/// One sampleable training window.
struct Window {
    demo: usize,
    start: usize,
    len: usize,
}

fn collect_windows(planes: &[Vec<Plane>], seq_len: usize) -> Vec<Window> {
    let mut windows = Vec::new();
    for (di, demo) in planes.iter().enumerate() {
        let len = seq_len.min(demo.len());
        if len < 2 {
            continue;
        }
        for start in 0..=demo.len() - len {
            windows.push(Window {
                demo: di,
                start,
                len,
            });
        }
    }
    windows
}

fn window_slices<'a>(planes: &'a [Vec<Plane>], windows: &[&Window]) -> Vec<&'a [Plane]> {
    windows
        .iter()
        .map(|w| &planes[w.demo][w.start..w.start + w.len])
        .collect()
}

/// Forward a whole set of windows (grouped by length) and return the mean
/// per-window loss. Does not touch gradients.
fn evaluate(arch: &ArchSpec, params: &[f64], planes: &[Vec<Plane>], windows: &[Window]) -> f64 {
    let norm = windows.len();
    let mut by_len: std::collections::BTreeMap<usize, Vec<&Window>> =
        std::collections::BTreeMap::new();
    for w in windows {
        by_len.entry(w.len).or_default().push(w);
    }
    let mut loss = 0.0;
    for group in by_len.values() {
        for chunk in group.chunks(8) {
            let slices = window_slices(planes, chunk);
            loss += forward_batch(arch, params, &slices, norm).loss;
        }
    }
    loss
}

/// Train one network on demonstration frames.
///
/// Windows of `sequence_len` consecutive frames are sampled uniformly
/// from the training demonstrations; the loss is the mean squared error
/// of each next-frame prediction. Validation loss is computed every epoch
/// over all validation windows and the weights that scored best are the
/// ones returned.
pub fn train(
    train_demos: &[&Demonstration],
    val_demos: &[&Demonstration],
    tc: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    tc.validate()?;
    if train_demos.is_empty() {
        return Err(TrainError::NoData("no training demonstrations".into()));
    }
    if val_demos.is_empty() {
        return Err(TrainError::NoData("no validation demonstrations".into()));
    }

    let to_planes = |demos: &[&Demonstration]| -> Result<Vec<Vec<Plane>>, TrainError> {
        demos
            .iter()
            .map(|d| {
                d.frames
                    .iter()
                    .map(|f| Ok(frame_to_plane(&downsample(f, tc.downsample_factor)?)))
                    .collect()
            })
            .collect()
    };
    let train_planes = to_planes(train_demos)?;
    let val_planes = to_planes(val_demos)?;

    let first = &train_demos[0].frames[0];
    let in_w = (first.width() / tc.downsample_factor) as usize;
    let in_h = (first.height() / tc.downsample_factor) as usize;
    let arch = ArchSpec::new(in_w, in_h)?;
    for demo in train_demos.iter().chain(val_demos) {
        for f in &demo.frames {
            if f.dims() != first.dims() {
                return Err(TrainError::InputMismatch {
                    got_w: f.width(),
                    got_h: f.height(),
                    want_w: first.width(),
                    want_h: first.height(),
                });
            }
        }
    }

    let train_windows = collect_windows(&train_planes, tc.sequence_len);
    let val_windows = collect_windows(&val_planes, tc.sequence_len);
    if train_windows.is_empty() {
        return Err(TrainError::NoData("no usable training windows".into()));
    }
    if val_windows.is_empty() {
        return Err(TrainError::NoData("no usable validation windows".into()));
    }

    // Mean training pixel value per channel, for the output bias.
    let mut mean_rgb = [0.0f64; 3];
    let mut count = 0usize;
    for demo in &train_planes {
        for plane in demo {
            let hw = plane.len() / 3;
            for c in 0..3 {
                mean_rgb[c] += plane[c * hw..(c + 1) * hw].iter().sum::<f64>();
            }
            count += hw;
        }
    }
    for m in &mut mean_rgb {
        *m /= count as f64;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut params = init_params(&arch, &mut rng, mean_rgb);
    let mut grads = vec![0.0; params.len()];
    let mut adam = Adam::new(params.len(), tc.lr, tc.beta1, tc.beta2, tc.eps);

    let mut log = Vec::new();
    let mut best_params = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;

    for epoch in 1..=tc.max_epochs {
        let mut epoch_loss = 0.0;
        let mut sampled = 0usize;
        while sampled < tc.sequences_per_epoch {
            let batch = tc.batch_size.min(tc.sequences_per_epoch - sampled);
            let picks: Vec<&Window> = (0..batch)
                .map(|_| &train_windows[rng.gen_range(0..train_windows.len())])
                .collect();
            sampled += batch;

            // Uniform sequence lengths within a group; mixed batches are
            // split and share one normalizer.
            let mut by_len: std::collections::BTreeMap<usize, Vec<&Window>> =
                std::collections::BTreeMap::new();
            for w in &picks {
                by_len.entry(w.len).or_default().push(w);
            }
            grads.fill(0.0);
            let mut batch_loss = 0.0;
            for group in by_len.values() {
                let slices = window_slices(&train_planes, group);
                let cache = forward_batch(&arch, &params, &slices, batch);
                batch_loss += cache.loss;
                backward_batch(&arch, &params, &cache, batch, &mut grads);
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFinite { epoch });
            }
            adam.update(&mut params, &grads);
            epoch_loss += batch_loss * batch as f64;
        }
        let train_mse = epoch_loss / sampled as f64;

        if params.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFinite { epoch });
        }

        let val_mse = evaluate(&arch, &params, &val_planes, &val_windows);
        if !val_mse.is_finite() {
            return Err(TrainError::NonFinite { epoch });
        }
        log.push(EpochLog {
            epoch,
            train_mse,
            val_mse,
        });
        if val_mse < best_val {
            best_val = val_mse;
            best_epoch = epoch;
            best_params.copy_from_slice(&params);
        }
        if let Some(patience) = tc.patience {
            if epoch - best_epoch >= patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        weights: NeuralWeights::from_parts(arch, best_params),
        log,
        best_epoch,
        best_val_mse: best_val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DemoRole, Demonstration};
    use crate::grid::{GridPos, TaskSpec};
    use crate::render::RenderConfig;

    fn quick_config() -> TrainConfig {
        TrainConfig {
            sequences_per_epoch: 8,
            max_epochs: 3,
            patience: None,
            ..TrainConfig::default()
        }
    }

    fn demo(start: (u8, u8)) -> Demonstration {
        let cfg = RenderConfig::default();
        Demonstration::generate_expert(
            &TaskSpec::movetopos(),
            GridPos::new(start.0, start.1).unwrap(),
            DemoRole::Train,
            &cfg,
        )
        .unwrap()
    }

    #[test]
    fn defaults_match_protocol() {
        let tc = TrainConfig::default();
        assert_eq!(tc.sequence_len, 5);
        assert_eq!(tc.batch_size, 4);
        assert_eq!(tc.sequences_per_epoch, 64);
        assert_eq!(tc.max_epochs, 500);
        assert_eq!(tc.lr, 1e-3);
        assert_eq!((tc.beta1, tc.beta2, tc.eps), (0.9, 0.999, 1e-8));
        tc.validate().unwrap();
    }

    #[test]
    fn training_is_seed_deterministic() {
        let d = demo((9, 8));
        let tc = quick_config();
        let a = train(&[&d], &[&d], &tc).unwrap();
        let b = train(&[&d], &[&d], &tc).unwrap();
        assert_eq!(a.weights.params(), b.weights.params());
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn best_weights_beat_final_epoch() {
        let d = demo((5, 8));
        let tc = TrainConfig {
            sequences_per_epoch: 8,
            max_epochs: 6,
            patience: None,
            ..TrainConfig::default()
        };
        let out = train(&[&d], &[&d], &tc).unwrap();
        let final_val = out.log.last().unwrap().val_mse;
        assert!(out.best_val_mse <= final_val);
        assert_eq!(out.log.len(), 6);
    }

    #[test]
    fn rejects_missing_data() {
        let d = demo((9, 8));
        let tc = quick_config();
        assert!(matches!(
            train(&[], &[&d], &tc),
            Err(TrainError::NoData(_))
        ));
        assert!(matches!(
            train(&[&d], &[], &tc),
            Err(TrainError::NoData(_))
        ));
    }

    #[test]
    fn log_csv_shape() {
        let d = demo((11, 8));
        let out = train(&[&d], &[&d], &quick_config()).unwrap();
        let csv = train_log_csv(&out.log);
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines[0], "epoch,train_mse,val_mse");
        assert_eq!(lines.len(), out.log.len() + 1);
        assert!(lines.len() - 1 <= 500);
    }
}
