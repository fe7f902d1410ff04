//! Forward and backward passes.
//!
//! Batch samples are interleaved as the innermost axis ("lanes"), so the
//! stride-2 convolutions decompose into unit-stride row operations over
//! column phases, and the recurrent layers run as one matrix product per
//! step. Everything is f64 and single-threaded, so results are
//! reproducible bit-for-bit on one platform.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::render::Frame;

use super::train::TrainError;
use super::{ArchSpec, NeuralWeights};

/// A frame as channel-major normalized floats: `[3][H][W]`, values in
/// `[0, 1]`.
pub(crate) type Plane = Vec<f64>;

pub(crate) fn frame_to_plane(frame: &Frame) -> Plane {
    let (w, h) = (frame.width() as usize, frame.height() as usize);
    let bytes = frame.as_bytes();
    let mut plane = vec![0.0; 3 * h * w];
    for c in 0..3 {
        let dst = &mut plane[c * h * w..(c + 1) * h * w];
        for (i, slot) in dst.iter_mut().enumerate() {
            *slot = bytes[i * 3 + c] as f64 / 255.0;
        }
    }
    plane
}

pub(crate) fn plane_to_frame(plane: &[f64], w: usize, h: usize) -> Frame {
    let mut data = vec![0u8; w * h * 3];
    for c in 0..3 {
        let src = &plane[c * h * w..(c + 1) * h * w];
        for (i, &v) in src.iter().enumerate() {
            data[i * 3 + c] = (v * 255.0).round().clamp(0.0, 255.0) as u8;
        }
    }
    Frame::new(w as u32, h as u32, data).expect("buffer length matches by construction")
}

/// Interleave one plane per lane into `[C][H][W][lanes]` order.
fn interleave(planes: &[&Plane], out: &mut [f64]) {
    let lanes = planes.len();
    let len = planes[0].len();
    debug_assert_eq!(out.len(), len * lanes);
    for idx in 0..len {
        for (b, p) in planes.iter().enumerate() {
            out[idx * lanes + b] = p[idx];
        }
    }
}

fn relu_inplace(buf: &mut [f64]) {
    for v in buf {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn sigmoid_inplace(buf: &mut [f64]) {
    for v in buf {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
}

/// `y += a * x` over equal-length slices; unit stride so it vectorizes.
#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with four accumulators to break the dependency chain.
#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += x[i] * y[i];
        acc[1] += x[i + 1] * y[i + 1];
        acc[2] += x[i + 2] * y[i + 2];
        acc[3] += x[i + 3] * y[i + 3];
    }
    for i in 4 * chunks..n {
        acc[0] += x[i] * y[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// Split every row of a lane-interleaved plane stack into even and odd
/// columns. Stride-2 kernels then become unit-stride passes over the
/// half-width phase planes.
fn split_cols(
    src: &[f64],
    ch: usize,
    h: usize,
    w: usize,
    lanes: usize,
    even: &mut [f64],
    odd: &mut [f64],
) {
    let wp = w / 2;
    let row_len = w * lanes;
    let prow_len = wp * lanes;
    for cr in 0..ch * h {
        let row = &src[cr * row_len..(cr + 1) * row_len];
        let erow = &mut even[cr * prow_len..(cr + 1) * prow_len];
        let orow = &mut odd[cr * prow_len..(cr + 1) * prow_len];
        for j in 0..wp {
            erow[j * lanes..(j + 1) * lanes]
                .copy_from_slice(&row[2 * j * lanes..(2 * j + 1) * lanes]);
            orow[j * lanes..(j + 1) * lanes]
                .copy_from_slice(&row[(2 * j + 1) * lanes..(2 * j + 2) * lanes]);
        }
    }
}

/// Interleave column phases back, adding into `dst`.
fn merge_cols_add(
    even: &[f64],
    odd: &[f64],
    ch: usize,
    h: usize,
    w: usize,
    lanes: usize,
    dst: &mut [f64],
) {
    let wp = w / 2;
    let row_len = w * lanes;
    let prow_len = wp * lanes;
    for cr in 0..ch * h {
        let row = &mut dst[cr * row_len..(cr + 1) * row_len];
        let erow = &even[cr * prow_len..(cr + 1) * prow_len];
        let orow = &odd[cr * prow_len..(cr + 1) * prow_len];
        for j in 0..wp {
            axpy(
                1.0,
                &erow[j * lanes..(j + 1) * lanes],
                &mut row[2 * j * lanes..(2 * j + 1) * lanes],
            );
            axpy(
                1.0,
                &orow[j * lanes..(j + 1) * lanes],
                &mut row[(2 * j + 1) * lanes..(2 * j + 2) * lanes],
            );
        }
    }
}

/// 3x3 convolution, stride 2, padding 1, over lane-interleaved planes.
/// `out` is overwritten.
fn conv_s2_fwd(
    inp: &[f64],
    ci: usize,
    hi: usize,
    wi: usize,
    lanes: usize,
    w: &[f64],
    b: &[f64],
    co: usize,
    out: &mut [f64],
) {
    let (ho, wo) = (hi / 2, wi / 2);
    let plane = ho * wo * lanes;
    let mut even = vec![0.0; ci * hi * wo * lanes];
    let mut odd = vec![0.0; ci * hi * wo * lanes];
    split_cols(inp, ci, hi, wi, lanes, &mut even, &mut odd);

    let prow = wo * lanes;
    for o in 0..co {
        out[o * plane..(o + 1) * plane].fill(b[o]);
    }
    for o in 0..co {
        for c in 0..ci {
            for u in 0..3 {
                let base = ((o * ci + c) * 3 + u) * 3;
                let (w0, w1, w2) = (w[base], w[base + 1], w[base + 2]);
                for i in usize::from(u == 0)..ho {
                    let r = 2 * i + u - 1;
                    let out_row = &mut out[(o * ho + i) * prow..(o * ho + i + 1) * prow];
                    let erow = &even[(c * hi + r) * prow..(c * hi + r + 1) * prow];
                    let orow = &odd[(c * hi + r) * prow..(c * hi + r + 1) * prow];
                    // Input column 2j+v-1: v=1 hits even columns, v=2 odd,
                    // v=0 odd shifted one output column right.
                    axpy(w1, erow, out_row);
                    axpy(w2, orow, out_row);
                    axpy(w0, &orow[..prow - lanes], &mut out_row[lanes..]);
                }
            }
        }
    }
}

/// Backward pass of [`conv_s2_fwd`]. `dinp`, when present, must be
/// zeroed by the caller; `dw`/`db` accumulate (summing over lanes).
#[allow(clippy::too_many_arguments)]
fn conv_s2_bwd(
    dout: &[f64],
    inp: &[f64],
    w: &[f64],
    ci: usize,
    hi: usize,
    wi: usize,
    lanes: usize,
    co: usize,
    dw: &mut [f64],
    db: &mut [f64],
    dinp: Option<&mut [f64]>,
) {
    let (ho, wo) = (hi / 2, wi / 2);
    let plane = ho * wo * lanes;
    for o in 0..co {
        db[o] += dout[o * plane..(o + 1) * plane].iter().sum::<f64>();
    }
    let mut even = vec![0.0; ci * hi * wo * lanes];
    let mut odd = vec![0.0; ci * hi * wo * lanes];
    split_cols(inp, ci, hi, wi, lanes, &mut even, &mut odd);
    let want_dinp = dinp.is_some();
    let mut deven = vec![0.0; if want_dinp { ci * hi * wo * lanes } else { 0 }];
    let mut dodd = vec![0.0; if want_dinp { ci * hi * wo * lanes } else { 0 }];

    let prow = wo * lanes;
    for o in 0..co {
        for c in 0..ci {
            for u in 0..3 {
                let base = ((o * ci + c) * 3 + u) * 3;
                let mut acc = [0.0f64; 3];
                for i in usize::from(u == 0)..ho {
                    let r = 2 * i + u - 1;
                    let dout_row = &dout[(o * ho + i) * prow..(o * ho + i + 1) * prow];
                    let erow = &even[(c * hi + r) * prow..(c * hi + r + 1) * prow];
                    let orow = &odd[(c * hi + r) * prow..(c * hi + r + 1) * prow];
                    acc[1] += dot(dout_row, erow);
                    acc[2] += dot(dout_row, orow);
                    acc[0] += dot(&dout_row[lanes..], &orow[..prow - lanes]);
                    if want_dinp {
                        let derow = &mut deven[(c * hi + r) * prow..(c * hi + r + 1) * prow];
                        axpy(w[base + 1], dout_row, derow);
                        let dorow = &mut dodd[(c * hi + r) * prow..(c * hi + r + 1) * prow];
                        axpy(w[base + 2], dout_row, dorow);
                        axpy(w[base], &dout_row[lanes..], &mut dorow[..prow - lanes]);
                    }
                }
                dw[base] += acc[0];
                dw[base + 1] += acc[1];
                dw[base + 2] += acc[2];
            }
        }
    }
    if let Some(di) = dinp {
        merge_cols_add(&deven, &dodd, ci, hi, wi, lanes, di);
    }
}

/// 3x3 transposed convolution, stride 2, padding 1, output padding 1:
/// doubles the spatial size. Weight layout is `[c_in][c_out][3][3]`.
/// `out` is overwritten.
#[allow(clippy::too_many_arguments)]
fn deconv_s2_fwd(
    inp: &[f64],
    ci: usize,
    hi: usize,
    wi: usize,
    lanes: usize,
    w: &[f64],
    b: &[f64],
    co: usize,
    out: &mut [f64],
) {
    let (ho, wo) = (hi * 2, wi * 2);
    // Accumulate in output column phases; the phase width equals wi.
    let mut even = vec![0.0; co * ho * wi * lanes];
    let mut odd = vec![0.0; co * ho * wi * lanes];
    let prow = wi * lanes;

    for c in 0..ci {
        for o in 0..co {
            for u in 0..3 {
                let base = ((c * co + o) * 3 + u) * 3;
                let (w0, w1, w2) = (w[base], w[base + 1], w[base + 2]);
                for i in usize::from(u == 0)..hi {
                    let r = 2 * i + u - 1;
                    let in_row = &inp[(c * hi + i) * prow..(c * hi + i + 1) * prow];
                    let erow = &mut even[(o * ho + r) * prow..(o * ho + r + 1) * prow];
                    axpy(w1, in_row, erow);
                    let orow = &mut odd[(o * ho + r) * prow..(o * ho + r + 1) * prow];
                    axpy(w2, in_row, orow);
                    // Output column 2j-1 lands one odd-phase column left.
                    axpy(w0, &in_row[lanes..], &mut orow[..prow - lanes]);
                }
            }
        }
    }
    let plane = ho * wo * lanes;
    for o in 0..co {
        out[o * plane..(o + 1) * plane].fill(b[o]);
    }
    merge_cols_add(&even, &odd, co, ho, wo, lanes, out);
}

/// Backward pass of [`deconv_s2_fwd`]. `dinp` must be zeroed by the
/// caller; `dw`/`db` accumulate (summing over lanes).
#[allow(clippy::too_many_arguments)]
fn deconv_s2_bwd(
    dout: &[f64],
    inp: &[f64],
    w: &[f64],
    ci: usize,
    hi: usize,
    wi: usize,
    lanes: usize,
    co: usize,
    dw: &mut [f64],
    db: &mut [f64],
    dinp: &mut [f64],
) {
    let (ho, wo) = (hi * 2, wi * 2);
    let plane = ho * wo * lanes;
    for o in 0..co {
        db[o] += dout[o * plane..(o + 1) * plane].iter().sum::<f64>();
    }
    let mut even = vec![0.0; co * ho * wi * lanes];
    let mut odd = vec![0.0; co * ho * wi * lanes];
    split_cols(dout, co, ho, wo, lanes, &mut even, &mut odd);

    let prow = wi * lanes;
    for c in 0..ci {
        for o in 0..co {
            for u in 0..3 {
                let base = ((c * co + o) * 3 + u) * 3;
                let (w0, w1, w2) = (w[base], w[base + 1], w[base + 2]);
                let mut acc = [0.0f64; 3];
                for i in usize::from(u == 0)..hi {
                    let r = 2 * i + u - 1;
                    let in_row = &inp[(c * hi + i) * prow..(c * hi + i + 1) * prow];
                    let di_row = &mut dinp[(c * hi + i) * prow..(c * hi + i + 1) * prow];
                    let erow = &even[(o * ho + r) * prow..(o * ho + r + 1) * prow];
                    let orow = &odd[(o * ho + r) * prow..(o * ho + r + 1) * prow];
                    acc[1] += dot(in_row, erow);
                    acc[2] += dot(in_row, orow);
                    acc[0] += dot(&in_row[lanes..], &orow[..prow - lanes]);
                    axpy(w1, erow, di_row);
                    axpy(w2, orow, di_row);
                    axpy(w0, &orow[..prow - lanes], &mut di_row[lanes..]);
                }
                dw[base] += acc[0];
                dw[base + 1] += acc[1];
                dw[base + 2] += acc[2];
            }
        }
    }
}

struct WeightViews<'a> {
    conv1_w: &'a [f64],
    conv1_b: &'a [f64],
    conv2_w: &'a [f64],
    conv2_b: &'a [f64],
    w_xh: ArrayView2<'a, f64>,
    w_hh: ArrayView2<'a, f64>,
    b_h: ArrayView1<'a, f64>,
    w_hf: ArrayView2<'a, f64>,
    b_f: ArrayView1<'a, f64>,
    dec1_w: &'a [f64],
    dec1_b: &'a [f64],
    dec2_w: &'a [f64],
    dec2_b: &'a [f64],
}

fn views<'a>(arch: &ArchSpec, params: &'a [f64]) -> WeightViews<'a> {
    let l = arch.layout();
    let feat = arch.feat_len();
    let hidden = ArchSpec::HIDDEN;
    WeightViews {
        conv1_w: &params[l.conv1_w],
        conv1_b: &params[l.conv1_b],
        conv2_w: &params[l.conv2_w],
        conv2_b: &params[l.conv2_b],
        w_xh: ArrayView2::from_shape((hidden, feat), &params[l.w_xh]).unwrap(),
        w_hh: ArrayView2::from_shape((hidden, hidden), &params[l.w_hh]).unwrap(),
        b_h: ArrayView1::from_shape(hidden, &params[l.b_h]).unwrap(),
        w_hf: ArrayView2::from_shape((feat, hidden), &params[l.w_hf]).unwrap(),
        b_f: ArrayView1::from_shape(feat, &params[l.b_f]).unwrap(),
        dec1_w: &params[l.dec1_w],
        dec1_b: &params[l.dec1_b],
        dec2_w: &params[l.dec2_w],
        dec2_b: &params[l.dec2_b],
    }
}

/// Encoder over interleaved lanes: input plane stack -> feature matrix
/// `[feat][lanes]` (post-ReLU), capturing the intermediate activation.
fn encode(
    arch: &ArchSpec,
    wv: &WeightViews,
    x: &[f64],
    lanes: usize,
    a1: &mut [f64],
    feat_out: &mut [f64],
) {
    conv_s2_fwd(
        x,
        ArchSpec::IN_CH,
        arch.in_h(),
        arch.in_w(),
        lanes,
        wv.conv1_w,
        wv.conv1_b,
        ArchSpec::C1,
        a1,
    );
    relu_inplace(a1);
    conv_s2_fwd(
        a1,
        ArchSpec::C1,
        arch.h1(),
        arch.w1(),
        lanes,
        wv.conv2_w,
        wv.conv2_b,
        ArchSpec::C2,
        feat_out,
    );
    relu_inplace(feat_out);
}

/// Decoder over interleaved lanes: feature matrix (as `[C2][h2][w2][lanes]`
/// planes) -> sigmoid output planes, capturing the intermediate
/// activation.
fn decode(
    arch: &ArchSpec,
    wv: &WeightViews,
    g: &[f64],
    lanes: usize,
    d1: &mut [f64],
    y: &mut [f64],
) {
    deconv_s2_fwd(
        g,
        ArchSpec::C2,
        arch.h2(),
        arch.w2(),
        lanes,
        wv.dec1_w,
        wv.dec1_b,
        ArchSpec::C1,
        d1,
    );
    relu_inplace(d1);
    deconv_s2_fwd(
        d1,
        ArchSpec::C1,
        arch.h1(),
        arch.w1(),
        lanes,
        wv.dec2_w,
        wv.dec2_b,
        ArchSpec::IN_CH,
        y,
    );
    sigmoid_inplace(y);
}

/// Activations kept for backprop, interleaved over `steps * batch` lanes
/// in time-major block order (lane = t * batch + b).
pub(crate) struct BatchCache {
    steps: usize,
    batch: usize,
    x: Vec<f64>,
    targets: Vec<f64>,
    a1: Vec<f64>,
    f: Array2<f64>,
    h: Array2<f64>,
    g: Array2<f64>,
    d1: Vec<f64>,
    y: Vec<f64>,
    pub loss: f64,
}

/// Run a batch of equally long windows. Each window is a slice of L >= 2
/// frame planes; frames 0..L-1 are inputs and 1..L are targets. The loss
/// is the squared error per subpixel, averaged over steps and subpixels
/// and divided by `norm` (the logical batch size, which may exceed
/// `windows.len()` when a batch is processed in length groups).
///
/// Training is teacher-forced, so every input frame is known up front:
/// the encoder, the input projection, the feature projection and the
/// decoder each run once over all `steps * batch` lanes, and only the
/// small hidden-to-hidden product iterates over time.
pub(crate) fn forward_batch(
    arch: &ArchSpec,
    params: &[f64],
    windows: &[&[Plane]],
    norm: usize,
) -> BatchCache {
    let batch = windows.len();
    let len = windows[0].len();
    assert!(len >= 2, "windows need at least two frames");
    assert!(windows.iter().all(|w| w.len() == len));
    let steps = len - 1;
    let lanes = steps * batch;

    let wv = views(arch, params);
    let feat = arch.feat_len();
    let hidden = ArchSpec::HIDDEN;
    let a1_len = ArchSpec::C1 * arch.h1() * arch.w1() * lanes;
    let out_len = ArchSpec::IN_CH * arch.in_h() * arch.in_w();
    let coeff = 1.0 / (norm as f64 * steps as f64 * out_len as f64);

    let mut x = vec![0.0; out_len * lanes];
    let inputs: Vec<&Plane> = (0..steps)
        .flat_map(|t| windows.iter().map(move |w| &w[t]))
        .collect();
    interleave(&inputs, &mut x);
    let mut targets = vec![0.0; out_len * lanes];
    let tgts: Vec<&Plane> = (0..steps)
        .flat_map(|t| windows.iter().map(move |w| &w[t + 1]))
        .collect();
    interleave(&tgts, &mut targets);

    let mut a1 = vec![0.0; a1_len];
    let mut f_flat = vec![0.0; feat * lanes];
    encode(arch, &wv, &x, lanes, &mut a1, &mut f_flat);
    let f = Array2::from_shape_vec((feat, lanes), f_flat).unwrap();

    // Input drive for every step at once, then the recurrence.
    let mut xh = Array2::<f64>::zeros((hidden, lanes));
    general_mat_mul(1.0, &wv.w_xh, &f, 0.0, &mut xh);
    xh += &wv.b_h.insert_axis(Axis(1));
    let mut h = Array2::<f64>::zeros((hidden, lanes));
    let mut h_prev = Array2::<f64>::zeros((hidden, batch));
    for t in 0..steps {
        let cols = t * batch..(t + 1) * batch;
        let mut h_pre = xh.slice(ndarray::s![.., cols.clone()]).to_owned();
        general_mat_mul(1.0, &wv.w_hh, &h_prev, 1.0, &mut h_pre);
        h_pre.mapv_inplace(f64::tanh);
        h.slice_mut(ndarray::s![.., cols]).assign(&h_pre);
        h_prev = h_pre;
    }

    let mut g = Array2::<f64>::zeros((feat, lanes));
    general_mat_mul(1.0, &wv.w_hf, &h, 0.0, &mut g);
    g += &wv.b_f.insert_axis(Axis(1));
    g.mapv_inplace(|v| v.max(0.0));

    let mut d1 = vec![0.0; a1_len];
    let mut y = vec![0.0; out_len * lanes];
    decode(
        arch,
        &wv,
        g.as_slice().expect("g is standard layout"),
        lanes,
        &mut d1,
        &mut y,
    );
    let sq: f64 = y
        .iter()
        .zip(&targets)
        .map(|(&yv, &tv)| (yv - tv) * (yv - tv))
        .sum();

    BatchCache {
        steps,
        batch,
        x,
        targets,
        a1,
        f,
        h,
        g,
        d1,
        y,
        loss: coeff * sq,
    }
}

/// Mutable weight and bias gradient slices for one layer; the two ranges
/// are adjacent in the layout.
fn wb_grads<'g>(
    grads: &'g mut [f64],
    w: &std::ops::Range<usize>,
    b: &std::ops::Range<usize>,
) -> (&'g mut [f64], &'g mut [f64]) {
    debug_assert_eq!(w.end, b.start);
    grads[w.start..b.end].split_at_mut(w.end - w.start)
}

/// Backpropagate through time, accumulating into `grads` (same layout as
/// the parameters).
pub(crate) fn backward_batch(
    arch: &ArchSpec,
    params: &[f64],
    cache: &BatchCache,
    norm: usize,
    grads: &mut [f64],
) {
    let batch = cache.batch;
    let steps = cache.steps;
    let lanes = steps * batch;
    let wv = views(arch, params);
    let l = arch.layout();
    let feat = arch.feat_len();
    let hidden = ArchSpec::HIDDEN;
    let a1_len = ArchSpec::C1 * arch.h1() * arch.w1() * lanes;
    let out_len = ArchSpec::IN_CH * arch.in_h() * arch.in_w();
    let coeff = 2.0 / (norm as f64 * steps as f64 * out_len as f64);

    // Through the sigmoid and the decoder, all lanes at once.
    let mut dz = vec![0.0; out_len * lanes];
    for i in 0..out_len * lanes {
        let y = cache.y[i];
        dz[i] = coeff * (y - cache.targets[i]) * y * (1.0 - y);
    }
    let mut dd1 = vec![0.0; a1_len];
    {
        let (dw, db) = wb_grads(grads, &l.dec2_w, &l.dec2_b);
        deconv_s2_bwd(
            &dz,
            &cache.d1,
            wv.dec2_w,
            ArchSpec::C1,
            arch.h1(),
            arch.w1(),
            lanes,
            ArchSpec::IN_CH,
            dw,
            db,
            &mut dd1,
        );
    }
    for (dv, &post) in dd1.iter_mut().zip(&cache.d1) {
        if post <= 0.0 {
            *dv = 0.0;
        }
    }
    let mut dg = Array2::<f64>::zeros((feat, lanes));
    {
        let (dw, db) = wb_grads(grads, &l.dec1_w, &l.dec1_b);
        deconv_s2_bwd(
            &dd1,
            cache.g.as_slice().expect("g is standard layout"),
            wv.dec1_w,
            ArchSpec::C2,
            arch.h2(),
            arch.w2(),
            lanes,
            ArchSpec::C1,
            dw,
            db,
            dg.as_slice_mut().expect("dg is standard layout"),
        );
    }
    // ReLU mask of the projection output.
    for (dv, &post) in dg
        .as_slice_mut()
        .unwrap()
        .iter_mut()
        .zip(cache.g.as_slice().unwrap())
    {
        if post <= 0.0 {
            *dv = 0.0;
        }
    }

    {
        let mut d_whf =
            ArrayViewMut2::from_shape((feat, hidden), &mut grads[l.w_hf.clone()]).unwrap();
        general_mat_mul(1.0, &dg, &cache.h.t(), 1.0, &mut d_whf);
    }
    {
        let dbf = dg.sum_axis(Axis(1));
        for (slot, v) in grads[l.b_f.clone()].iter_mut().zip(dbf.iter()) {
            *slot += v;
        }
    }

    // Hidden-state gradient from the projection, then the recurrence in
    // reverse, writing tanh-preactivation gradients per time block.
    let mut dh_proj = Array2::<f64>::zeros((hidden, lanes));
    general_mat_mul(1.0, &wv.w_hf.t(), &dg, 0.0, &mut dh_proj);
    let mut dpre = Array2::<f64>::zeros((hidden, lanes));
    let mut carry = Array2::<f64>::zeros((hidden, batch));
    for t in (0..steps).rev() {
        let cols = t * batch..(t + 1) * batch;
        let mut dpre_t = dh_proj.slice(ndarray::s![.., cols.clone()]).to_owned();
        dpre_t += &carry;
        let h_t = cache.h.slice(ndarray::s![.., cols.clone()]);
        ndarray::Zip::from(&mut dpre_t)
            .and(&h_t)
            .for_each(|dv, &hv| *dv *= 1.0 - hv * hv);
        if t > 0 {
            let h_prev = cache.h.slice(ndarray::s![.., (t - 1) * batch..t * batch]);
            let mut d_whh =
                ArrayViewMut2::from_shape((hidden, hidden), &mut grads[l.w_hh.clone()]).unwrap();
            general_mat_mul(1.0, &dpre_t, &h_prev.t(), 1.0, &mut d_whh);
        }
        let mut next = Array2::<f64>::zeros((hidden, batch));
        general_mat_mul(1.0, &wv.w_hh.t(), &dpre_t, 0.0, &mut next);
        carry = next;
        dpre.slice_mut(ndarray::s![.., cols]).assign(&dpre_t);
    }

    {
        let mut d_wxh =
            ArrayViewMut2::from_shape((hidden, feat), &mut grads[l.w_xh.clone()]).unwrap();
        general_mat_mul(1.0, &dpre, &cache.f.t(), 1.0, &mut d_wxh);
    }
    {
        let dbh = dpre.sum_axis(Axis(1));
        for (slot, v) in grads[l.b_h.clone()].iter_mut().zip(dbh.iter()) {
            *slot += v;
        }
    }

    let mut df = Array2::<f64>::zeros((feat, lanes));
    general_mat_mul(1.0, &wv.w_xh.t(), &dpre, 0.0, &mut df);

    // ReLU mask of the encoder output, then back through the convs.
    let da2 = df.as_slice_mut().unwrap();
    for (dv, &post) in da2.iter_mut().zip(cache.f.as_slice().unwrap()) {
        if post <= 0.0 {
            *dv = 0.0;
        }
    }
    let mut da1 = vec![0.0; a1_len];
    {
        let (dw, db) = wb_grads(grads, &l.conv2_w, &l.conv2_b);
        conv_s2_bwd(
            da2,
            &cache.a1,
            wv.conv2_w,
            ArchSpec::C1,
            arch.h1(),
            arch.w1(),
            lanes,
            ArchSpec::C2,
            dw,
            db,
            Some(&mut da1),
        );
    }
    for (dv, &post) in da1.iter_mut().zip(&cache.a1) {
        if post <= 0.0 {
            *dv = 0.0;
        }
    }
    {
        let (dw, db) = wb_grads(grads, &l.conv1_w, &l.conv1_b);
        conv_s2_bwd(
            &da1,
            &cache.x,
            wv.conv1_w,
            ArchSpec::IN_CH,
            arch.in_h(),
            arch.in_w(),
            lanes,
            ArchSpec::C1,
            dw,
            db,
            None,
        );
    }
}

/// Run the recurrent core over a history of planes and return the frame
/// predicted after the last input. Decoding only happens once, at the end.
pub(crate) fn predict_next(arch: &ArchSpec, params: &[f64], history: &[&Plane]) -> Frame {
    let wv = views(arch, params);
    let feat = arch.feat_len();
    let hidden = ArchSpec::HIDDEN;
    let a1_len = ArchSpec::C1 * arch.h1() * arch.w1();
    let out_len = ArchSpec::IN_CH * arch.in_h() * arch.in_w();

    let mut a1 = vec![0.0; a1_len];
    let mut f = Array2::<f64>::zeros((feat, 1));
    let mut h = Array2::<f64>::zeros((hidden, 1));
    for plane in history {
        encode(
            arch,
            &wv,
            plane,
            1,
            &mut a1,
            f.as_slice_mut().expect("f is standard layout"),
        );
        let mut h_pre = Array2::<f64>::zeros((hidden, 1));
        general_mat_mul(1.0, &wv.w_xh, &f, 0.0, &mut h_pre);
        general_mat_mul(1.0, &wv.w_hh, &h, 1.0, &mut h_pre);
        h_pre += &wv.b_h.insert_axis(Axis(1));
        h_pre.mapv_inplace(f64::tanh);
        h = h_pre;
    }

    let mut g = Array2::<f64>::zeros((feat, 1));
    general_mat_mul(1.0, &wv.w_hf, &h, 0.0, &mut g);
    g += &wv.b_f.insert_axis(Axis(1));
    g.mapv_inplace(|v| v.max(0.0));

    let mut d1 = vec![0.0; a1_len];
    let mut y = vec![0.0; out_len];
    decode(
        arch,
        &wv,
        g.as_slice().expect("g is standard layout"),
        1,
        &mut d1,
        &mut y,
    );
    plane_to_frame(&y, arch.in_w(), arch.in_h())
}

fn prep_windows(
    weights: &NeuralWeights,
    windows: &[Vec<Frame>],
) -> Result<Vec<Vec<Plane>>, TrainError> {
    windows
        .iter()
        .map(|frames| {
            if frames.len() < 2 {
                return Err(TrainError::ShortWindow);
            }
            frames
                .iter()
                .map(|f| {
                    super::prep_frame(f, weights.arch()).map_err(|_| TrainError::InputMismatch {
                        got_w: f.width(),
                        got_h: f.height(),
                        want_w: weights.arch().in_w() as u32,
                        want_h: weights.arch().in_h() as u32,
                    })
                })
                .collect()
        })
        .collect()
}

fn grouped_loss_and_grad(
    weights: &NeuralWeights,
    planes: &[Vec<Plane>],
    want_grad: bool,
) -> (f64, Option<Vec<f64>>) {
    let arch = weights.arch();
    let norm = planes.len();
    let mut groups: std::collections::BTreeMap<usize, Vec<&[Plane]>> =
        std::collections::BTreeMap::new();
    for w in planes {
        groups.entry(w.len()).or_default().push(w.as_slice());
    }
    let mut loss = 0.0;
    let mut grads = want_grad.then(|| vec![0.0; arch.param_count()]);
    for group in groups.values() {
        let cache = forward_batch(arch, weights.params(), group, norm);
        loss += cache.loss;
        if let Some(g) = grads.as_deref_mut() {
            backward_batch(arch, weights.params(), &cache, norm, g);
        }
    }
    (loss, grads)
}

/// Mean per-subpixel squared error over a set of windows, averaged over
/// windows. Frames at an integer multiple of the input size are
/// block-downsampled first.
pub fn batch_loss(weights: &NeuralWeights, windows: &[Vec<Frame>]) -> Result<f64, TrainError> {
    if windows.is_empty() {
        return Err(TrainError::NoData("no windows supplied".into()));
    }
    let planes = prep_windows(weights, windows)?;
    Ok(grouped_loss_and_grad(weights, &planes, false).0)
}

/// Loss as in [`batch_loss`] together with its gradient in parameter
/// layout order.
pub fn batch_loss_and_grad(
    weights: &NeuralWeights,
    windows: &[Vec<Frame>],
) -> Result<(f64, Vec<f64>), TrainError> {
    if windows.is_empty() {
        return Err(TrainError::NoData("no windows supplied".into()));
    }
    let planes = prep_windows(weights, windows)?;
    let (loss, grads) = grouped_loss_and_grad(weights, &planes, true);
    Ok((loss, grads.expect("gradient was requested")))
}

/// Temporary instrumentation for development profiling.
#[doc(hidden)]
pub fn profile_batch(weights: &NeuralWeights, windows: &[Vec<Frame>]) {
    use std::time::Instant;
    let planes = prep_windows(weights, windows).unwrap();
    let group: Vec<&[Plane]> = planes.iter().map(|w| w.as_slice()).collect();
    let arch = weights.arch();
    let norm = group.len();

    let reps = 50;
    let t = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(forward_batch(arch, weights.params(), &group, norm));
    }
    println!("  forward_batch: {:.2} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let cache = forward_batch(arch, weights.params(), &group, norm);
    let mut grads = vec![0.0; arch.param_count()];
    let t = Instant::now();
    for _ in 0..reps {
        backward_batch(arch, weights.params(), &cache, norm, &mut grads);
    }
    println!("  backward_batch: {:.2} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    // Encoder alone on one interleaved step.
    let lanes = norm;
    let out_len = ArchSpec::IN_CH * arch.in_h() * arch.in_w();
    let a1_len = ArchSpec::C1 * arch.h1() * arch.w1() * lanes;
    let mut x = vec![0.0; out_len * lanes];
    let inputs: Vec<&Plane> = group.iter().map(|w| &w[0]).collect();
    interleave(&inputs, &mut x);
    let wv = views(arch, weights.params());
    let mut a1 = vec![0.0; a1_len];
    let mut f = vec![0.0; arch.feat_len() * lanes];
    let t = Instant::now();
    for _ in 0..(reps * 4) {
        encode(arch, &wv, &x, lanes, &mut a1, &mut f);
    }
    println!("  encode/step: {:.3} ms", t.elapsed().as_secs_f64() * 1e3 / (reps * 4) as f64);

    let g = vec![0.1; arch.feat_len() * lanes];
    let mut d1 = vec![0.0; a1_len];
    let mut y = vec![0.0; out_len * lanes];
    let t = Instant::now();
    for _ in 0..(reps * 4) {
        decode(arch, &wv, &g, lanes, &mut d1, &mut y);
    }
    println!("  decode/step: {:.3} ms", t.elapsed().as_secs_f64() * 1e3 / (reps * 4) as f64);
}

/// Compare analytic gradients against central finite differences on a
/// random parameter subset; returns the worst relative error.
///
/// Relative error is `|ga - gn| / max(|ga|, |gn|, 1e-8)` with step `h`.
pub fn gradient_check(
    weights: &NeuralWeights,
    window: &[Frame],
    seed: u64,
    n_params: usize,
    h: f64,
) -> Result<f64, TrainError> {
    use rand::SeedableRng;

    let windows = vec![window.to_vec()];
    let (_, grads) = batch_loss_and_grad(weights, &windows)?;

    let mut probe = weights.clone();
    let total = probe.params.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = std::collections::BTreeSet::new();
    while picked.len() < n_params.min(total) {
        picked.insert(rng.gen_range(0..total));
    }

    let mut worst: f64 = 0.0;
    for &idx in &picked {
        let original = probe.params[idx];
        probe.params[idx] = original + h;
        let up = batch_loss(&probe, &windows)?;
        probe.params[idx] = original - h;
        let down = batch_loss(&probe, &windows)?;
        probe.params[idx] = original;

        let numeric = (up - down) / (2.0 * h);
        let analytic = grads[idx];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::super::train::init_params;
    use super::*;
    use crate::grid::GridPos;
    use crate::render::{render, RenderConfig};
    use rand::SeedableRng;

    fn tiny_arch() -> ArchSpec {
        ArchSpec::new(12, 8).unwrap()
    }

    fn random_weights(arch: ArchSpec, seed: u64) -> NeuralWeights {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_params(&arch, &mut rng, [0.5, 0.5, 0.5]);
        NeuralWeights::from_parts(arch, params)
    }

    fn random_window(arch: &ArchSpec, seed: u64, len: usize) -> Vec<Frame> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len)
            .map(|_| {
                let data: Vec<u8> = (0..arch.in_w() * arch.in_h() * 3)
                    .map(|_| rng.gen())
                    .collect();
                Frame::new(arch.in_w() as u32, arch.in_h() as u32, data).unwrap()
            })
            .collect()
    }

    #[test]
    fn plane_round_trip() {
        let cfg = RenderConfig::default();
        let f = render(GridPos::new(4, 4).unwrap(), &cfg, false);
        let plane = frame_to_plane(&f);
        let back = plane_to_frame(&plane, f.width() as usize, f.height() as usize);
        assert_eq!(back, f);
    }

    #[test]
    fn batched_loss_matches_singles() {
        // Interleaved lanes must not change the math: a batch of two
        // windows scores the mean of the windows scored alone.
        let arch = tiny_arch();
        let weights = random_weights(arch, 3);
        let wa = random_window(&arch, 31, 4);
        let wb = random_window(&arch, 32, 4);
        let together = batch_loss(&weights, &[wa.clone(), wb.clone()]).unwrap();
        let a = batch_loss(&weights, &[wa]).unwrap();
        let b = batch_loss(&weights, &[wb]).unwrap();
        assert!(
            (together - (a + b) / 2.0).abs() < 1e-12,
            "batched {together} vs mean {}",
            (a + b) / 2.0
        );
    }

    #[test]
    fn gradcheck_on_rendered_frames() {
        // Full-size network, real rendered frames downsampled by 2.
        let cfg = RenderConfig::default();
        let arch = ArchSpec::new(60, 36).unwrap();
        let weights = random_weights(arch, 11);
        let window: Vec<Frame> = [(4u8, 2u8), (5, 2), (6, 2)]
            .into_iter()
            .map(|(x, y)| render(GridPos::new(x, y).unwrap(), &cfg, false))
            .collect();
        let err = gradient_check(&weights, &window, 5, 60, 1e-4).unwrap();
        assert!(err < 1e-3, "max relative error {err}");
    }

    #[test]
    fn gradcheck_is_deterministic() {
        let arch = tiny_arch();
        let weights = random_weights(arch, 2);
        let window = random_window(&arch, 9, 2);
        let a = gradient_check(&weights, &window, 7, 30, 1e-4).unwrap();
        let b = gradient_check(&weights, &window, 7, 30, 1e-4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn descent_step_reduces_loss() {
        // One plain gradient step with a small rate on a fixed batch, for
        // several random draws.
        for seed in 0..20 {
            let arch = tiny_arch();
            let mut weights = random_weights(arch, seed);
            let windows = vec![
                random_window(&arch, 100 + seed, 3),
                random_window(&arch, 200 + seed, 3),
            ];
            let (before, grads) = batch_loss_and_grad(&weights, &windows).unwrap();
            for (p, g) in weights.params.iter_mut().zip(&grads) {
                *p -= 1e-4 * g;
            }
            let after = batch_loss(&weights, &windows).unwrap();
            assert!(
                after <= before + 1e-12,
                "seed {seed}: loss rose {before} -> {after}"
            );
        }
    }

    #[test]
    fn prediction_shape_is_input_shape() {
        let arch = tiny_arch();
        let weights = random_weights(arch, 4);
        let frames = random_window(&arch, 5, 3);
        let planes: Vec<Plane> = frames.iter().map(frame_to_plane).collect();
        let refs: Vec<&Plane> = planes.iter().collect();

        let single = predict_next(&arch, weights.params(), &refs[..1]);
        assert_eq!(single.dims(), (12, 8));
        let seq = predict_next(&arch, weights.params(), &refs);
        assert_eq!(seq.dims(), (12, 8));
        assert_ne!(single, seq, "history should flow through the hidden state");
    }

    #[test]
    fn longer_history_only_changes_content() {
        let arch = tiny_arch();
        let weights = random_weights(arch, 4);
        for len in 1..6 {
            let frames = random_window(&arch, 21, len);
            let planes: Vec<Plane> = frames.iter().map(frame_to_plane).collect();
            let refs: Vec<&Plane> = planes.iter().collect();
            let out = predict_next(&arch, weights.params(), &refs);
            assert_eq!(out.dims(), (12, 8));
        }
    }
}
