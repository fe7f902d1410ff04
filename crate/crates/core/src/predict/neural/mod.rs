//! A small convolutional-recurrent next-frame predictor with hand-rolled
//! backpropagation.
//!
//! Architecture, fixed up to the input size: two stride-2 3x3 conv layers
//! (3 -> 8 -> 16 channels, ReLU), one fully-connected recurrent layer with
//! tanh over the flattened feature map (hidden size 256), a linear+ReLU
//! projection back to feature shape, and two stride-2 3x3 transposed conv
//! layers (16 -> 8 -> 3) with a sigmoid output in [0, 1]. Inputs are RGB
//! frames normalized to [0, 1], typically block-downsampled by 2 from the
//! native render resolution.

mod adam;
mod net;
mod train;
mod weights;

use std::ops::Range;
use std::sync::Arc;

use crate::dataset::fnv1a64;
use crate::render::{downsample, Frame};

use super::{ActionPredictor, ExpertPredictor, PredictError, PredictorBundle};
use crate::grid::Action;

pub use net::{batch_loss, batch_loss_and_grad, gradient_check, profile_batch};
pub use train::{train, train_log_csv, EpochLog, TrainConfig, TrainError, TrainOutcome};
pub use weights::WeightsError;

/// Network shape. Channel counts and hidden size are fixed; only the
/// input resolution varies, and it must be divisible by 4 so the two
/// stride-2 stages invert exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchSpec {
    in_h: usize,
    in_w: usize,
}

impl ArchSpec {
    pub const IN_CH: usize = 3;
    pub const C1: usize = 8;
    pub const C2: usize = 16;
    pub const HIDDEN: usize = 256;

    pub fn new(in_w: usize, in_h: usize) -> Result<Self, WeightsError> {
        if in_w == 0 || in_h == 0 || in_w % 4 != 0 || in_h % 4 != 0 {
            return Err(WeightsError::BadDims {
                width: in_w,
                height: in_h,
            });
        }
        Ok(Self { in_h, in_w })
    }

    pub fn in_w(&self) -> usize {
        self.in_w
    }

    pub fn in_h(&self) -> usize {
        self.in_h
    }

    pub(crate) fn h1(&self) -> usize {
        self.in_h / 2
    }

    pub(crate) fn w1(&self) -> usize {
        self.in_w / 2
    }

    pub(crate) fn h2(&self) -> usize {
        self.in_h / 4
    }

    pub(crate) fn w2(&self) -> usize {
        self.in_w / 4
    }

    /// Length of the flattened encoder output.
    pub fn feat_len(&self) -> usize {
        Self::C2 * self.h2() * self.w2()
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    pub(crate) fn layout(&self) -> ParamLayout {
        ParamLayout::new(self)
    }

    fn descriptor(&self) -> String {
        format!(
            "conv{}-{}-{}/k3s2/rnn{}tanh/dec{}-{}-{}/sigmoid/in{}x{}/f64",
            Self::IN_CH,
            Self::C1,
            Self::C2,
            Self::HIDDEN,
            Self::C2,
            Self::C1,
            Self::IN_CH,
            self.in_w,
            self.in_h
        )
    }

    /// Hash of the architecture descriptor, embedded in weight files.
    pub fn hash(&self) -> u64 {
        fnv1a64(self.descriptor().as_bytes())
    }
}

/// Offsets of each tensor inside the flat parameter vector, in
/// serialization order.
#[derive(Debug, Clone)]
pub(crate) struct ParamLayout {
    pub conv1_w: Range<usize>,
    pub conv1_b: Range<usize>,
    pub conv2_w: Range<usize>,
    pub conv2_b: Range<usize>,
    pub w_xh: Range<usize>,
    pub w_hh: Range<usize>,
    pub b_h: Range<usize>,
    pub w_hf: Range<usize>,
    pub b_f: Range<usize>,
    pub dec1_w: Range<usize>,
    pub dec1_b: Range<usize>,
    pub dec2_w: Range<usize>,
    pub dec2_b: Range<usize>,
    pub total: usize,
}

impl ParamLayout {
    fn new(arch: &ArchSpec) -> Self {
        let feat = arch.feat_len();
        let hidden = ArchSpec::HIDDEN;
        let mut at = 0;
        let mut next = |len: usize| {
            let range = at..at + len;
            at += len;
            range
        };
        let conv1_w = next(ArchSpec::C1 * ArchSpec::IN_CH * 9);
        let conv1_b = next(ArchSpec::C1);
        let conv2_w = next(ArchSpec::C2 * ArchSpec::C1 * 9);
        let conv2_b = next(ArchSpec::C2);
        let w_xh = next(hidden * feat);
        let w_hh = next(hidden * hidden);
        let b_h = next(hidden);
        let w_hf = next(feat * hidden);
        let b_f = next(feat);
        let dec1_w = next(ArchSpec::C2 * ArchSpec::C1 * 9);
        let dec1_b = next(ArchSpec::C1);
        let dec2_w = next(ArchSpec::C1 * ArchSpec::IN_CH * 9);
        let dec2_b = next(ArchSpec::IN_CH);
        Self {
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            w_xh,
            w_hh,
            b_h,
            w_hf,
            b_f,
            dec1_w,
            dec1_b,
            dec2_w,
            dec2_b,
            total: at,
        }
    }
}

/// Trained parameters plus their architecture. Parameters are immutable
/// from the outside; training constructs them.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralWeights {
    arch: ArchSpec,
    params: Vec<f64>,
}

impl NeuralWeights {
    pub(crate) fn from_parts(arch: ArchSpec, params: Vec<f64>) -> Self {
        debug_assert_eq!(params.len(), arch.param_count());
        Self { arch, params }
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }
}

/// How much larger an incoming frame is than the network input, if the
/// ratio is a clean integer on both axes.
fn infer_factor(frame: &Frame, arch: &ArchSpec) -> Option<u32> {
    let (w, h) = frame.dims();
    let (aw, ah) = (arch.in_w() as u32, arch.in_h() as u32);
    if w % aw != 0 || h % ah != 0 || w / aw != h / ah {
        return None;
    }
    Some(w / aw)
}

fn prep_frame(frame: &Frame, arch: &ArchSpec) -> Result<net::Plane, PredictError> {
    let factor = infer_factor(frame, arch).ok_or_else(|| PredictError::InputMismatch {
        got_w: frame.width(),
        got_h: frame.height(),
        want_w: arch.in_w() as u32,
        want_h: arch.in_h() as u32,
    })?;
    let ds = downsample(frame, factor)?;
    Ok(net::frame_to_plane(&ds))
}

/// Sequence-capable expert predictor: runs the recurrent core over the
/// whole history and emits the prediction after the last input.
pub struct NeuralExpert {
    weights: Arc<NeuralWeights>,
}

impl NeuralExpert {
    pub fn new(weights: Arc<NeuralWeights>) -> Self {
        Self { weights }
    }
}

impl ExpertPredictor for NeuralExpert {
    fn predict_next(&mut self, history: &[Frame]) -> Result<Frame, PredictError> {
        if history.is_empty() {
            return Err(PredictError::EmptyHistory);
        }
        let arch = self.weights.arch();
        let planes: Vec<net::Plane> = history
            .iter()
            .map(|f| prep_frame(f, arch))
            .collect::<Result<_, _>>()?;
        let refs: Vec<&net::Plane> = planes.iter().collect();
        Ok(net::predict_next(arch, self.weights.params(), &refs))
    }

    fn output_dims(&self) -> (u32, u32) {
        (
            self.weights.arch().in_w() as u32,
            self.weights.arch().in_h() as u32,
        )
    }
}

/// Single-image action predictor; one trained network per primitive.
pub struct NeuralAction {
    weights: Arc<NeuralWeights>,
}

impl NeuralAction {
    pub fn new(weights: Arc<NeuralWeights>) -> Self {
        Self { weights }
    }
}

impl ActionPredictor for NeuralAction {
    fn predict(&self, current: &Frame) -> Result<Frame, PredictError> {
        let arch = self.weights.arch();
        let plane = prep_frame(current, arch)?;
        Ok(net::predict_next(arch, self.weights.params(), &[&plane]))
    }

    fn output_dims(&self) -> (u32, u32) {
        (
            self.weights.arch().in_w() as u32,
            self.weights.arch().in_h() as u32,
        )
    }
}

/// Bundle a trained expert network with the four action networks, in
/// canonical action order.
pub fn neural_bundle(
    expert: Arc<NeuralWeights>,
    actions: [Arc<NeuralWeights>; 4],
) -> Result<PredictorBundle, PredictError> {
    let _ = Action::ALL;
    PredictorBundle::new(
        Box::new(NeuralExpert::new(expert)),
        actions.map(|w| -> Box<dyn ActionPredictor> { Box::new(NeuralAction::new(w)) }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arch_dimensions() {
        let arch = ArchSpec::new(60, 36).unwrap();
        assert_eq!(arch.feat_len(), 16 * 9 * 15);
        assert_eq!(arch.param_count(), 1_176_643);
        assert!(ArchSpec::new(61, 36).is_err());
        assert!(ArchSpec::new(0, 36).is_err());
    }

    #[test]
    fn layout_is_contiguous() {
        let arch = ArchSpec::new(60, 36).unwrap();
        let l = arch.layout();
        let ranges = [
            &l.conv1_w, &l.conv1_b, &l.conv2_w, &l.conv2_b, &l.w_xh, &l.w_hh, &l.b_h, &l.w_hf,
            &l.b_f, &l.dec1_w, &l.dec1_b, &l.dec2_w, &l.dec2_b,
        ];
        let mut at = 0;
        for r in ranges {
            assert_eq!(r.start, at);
            at = r.end;
        }
        assert_eq!(at, l.total);
    }

    #[test]
    fn arch_hash_distinguishes_sizes() {
        let a = ArchSpec::new(60, 36).unwrap();
        let b = ArchSpec::new(120, 72).unwrap();
        assert_ne!(a.hash(), b.hash());
    }
}
