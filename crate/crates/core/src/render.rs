//! Deterministic rasterizer for grid states plus the pixel-space error
//! metric used to compare predicted frames.
//!
//! Rendering is bit-exact across platforms: the disc test uses integer
//! arithmetic on doubled coordinates and there is no anti-aliasing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridPos, GRID_H, GRID_W};

/// An RGB8 color.
pub type Rgb = [u8; 3];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RenderError {
    #[error("frame dimensions {0}x{1} and {2}x{3} do not match")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("pixel buffer length {got} does not match {width}x{height}x3")]
    BadBufferLength { width: u32, height: u32, got: usize },
    #[error("downsample factor {factor} does not divide {width}x{height}")]
    BadFactor { factor: u32, width: u32, height: u32 },
    #[error("invalid render config: {0}")]
    BadConfig(String),
}

/// A fixed-size RGB8 raster image, row-major with the top row first.
#[derive(Clone, PartialEq, Eq)]
pub struct Frame {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Frame({}x{})", self.width, self.height)
    }
}

impl Frame {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, RenderError> {
        if width == 0 || height == 0 || data.len() != width as usize * height as usize * 3 {
            return Err(RenderError::BadBufferLength {
                width,
                height,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, color: Rgb) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            data.extend_from_slice(&color);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn px(&self, row: u32, col: u32) -> Rgb {
        let i = (row as usize * self.width as usize + col as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn set_px(&mut self, row: u32, col: u32, color: Rgb) {
        let i = (row as usize * self.width as usize + col as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&color);
    }
}

/// Synthetic occluder standing in for the demonstrator's arm: a vertical
/// bar from the bottom image edge up to the object center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmConfig {
    /// Draw the occluder on expert demonstration frames.
    pub expert_overlay: bool,
    pub color: Rgb,
    pub width_px: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderConfig {
    /// Pixels per grid cell.
    pub cell_px: u32,
    pub background: Rgb,
    pub grid_line: Rgb,
    pub object_color: Rgb,
    pub object_radius_px: u32,
    pub arm: ArmConfig,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            cell_px: 8,
            background: [220, 220, 220],
            grid_line: [255, 255, 255],
            object_color: [30, 30, 30],
            object_radius_px: 3,
            arm: ArmConfig {
                expert_overlay: false,
                color: [90, 60, 40],
                width_px: 6,
            },
        }
    }
}

impl RenderConfig {
    pub fn frame_width(&self) -> u32 {
        GRID_W as u32 * self.cell_px
    }

    pub fn frame_height(&self) -> u32 {
        GRID_H as u32 * self.cell_px
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if self.cell_px < 2 {
            return Err(RenderError::BadConfig(format!(
                "cell_px {} too small",
                self.cell_px
            )));
        }
        // The disc must fit inside a single cell.
        if 2 * self.object_radius_px >= self.cell_px {
            return Err(RenderError::BadConfig(format!(
                "object radius {} does not fit in a {}px cell",
                self.object_radius_px, self.cell_px
            )));
        }
        if self.arm.width_px == 0 {
            return Err(RenderError::BadConfig("arm width must be positive".into()));
        }
        Ok(())
    }

    /// Top pixel row of the cell at grid `y` (y grows upward, rows grow
    /// downward).
    fn cell_row0(&self, y: u8) -> u32 {
        (GRID_H as u32 - 1 - y as u32) * self.cell_px
    }

    fn cell_col0(&self, x: u8) -> u32 {
        x as u32 * self.cell_px
    }
}

/// Rasterize a grid state: background, grid lines at cell boundaries, a
/// filled disc centered in the object's cell, and optionally the arm
/// occluder drawn over everything beneath it.
pub fn render(pos: GridPos, cfg: &RenderConfig, arm_visible: bool) -> Frame {
    let w = cfg.frame_width();
    let h = cfg.frame_height();
    let mut frame = Frame::filled(w, h, cfg.background);

    for row in 0..h {
        let row_is_line = row % cfg.cell_px == 0 || row == h - 1;
        for col in 0..w {
            if row_is_line || col % cfg.cell_px == 0 || col == w - 1 {
                frame.set_px(row, col, cfg.grid_line);
            }
        }
    }

    // Disc: a pixel is filled iff its center lies within the radius of the
    // cell center. Doubled integer coordinates keep the test exact.
    let row0 = cfg.cell_row0(pos.y());
    let col0 = cfg.cell_col0(pos.x());
    let center_r2 = (2 * row0 + cfg.cell_px) as i64;
    let center_c2 = (2 * col0 + cfg.cell_px) as i64;
    let radius2 = (2 * cfg.object_radius_px) as i64;
    for row in row0..row0 + cfg.cell_px {
        for col in col0..col0 + cfg.cell_px {
            let dr = 2 * row as i64 + 1 - center_r2;
            let dc = 2 * col as i64 + 1 - center_c2;
            if dr * dr + dc * dc <= radius2 * radius2 {
                frame.set_px(row, col, cfg.object_color);
            }
        }
    }

    if arm_visible {
        let center_row = row0 + cfg.cell_px / 2;
        let center_col = col0 + cfg.cell_px / 2;
        let left = center_col.saturating_sub(cfg.arm.width_px / 2);
        let right = (left + cfg.arm.width_px).min(w);
        for row in center_row..h {
            for col in left..right {
                frame.set_px(row, col, cfg.arm.color);
            }
        }
    }

    frame
}

/// Mean squared error over all subpixels, with channels normalized to
/// `[0, 1]`. Exactly symmetric and exactly zero iff the frames are
/// byte-identical.
pub fn frame_mse(a: &Frame, b: &Frame) -> Result<f64, RenderError> {
    if a.dims() != b.dims() {
        return Err(RenderError::DimensionMismatch(
            a.width, a.height, b.width, b.height,
        ));
    }
    let sum: u64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    Ok(sum as f64 / (a.data.len() as f64 * 255.0 * 255.0))
}

/// Block-average downsampling. Each output pixel is the mean of its
/// `factor` x `factor` block, rounded half-up per channel.
pub fn downsample(frame: &Frame, factor: u32) -> Result<Frame, RenderError> {
    if factor == 0 || frame.width % factor != 0 || frame.height % factor != 0 {
        return Err(RenderError::BadFactor {
            factor,
            width: frame.width,
            height: frame.height,
        });
    }
    if factor == 1 {
        return Ok(frame.clone());
    }
    let ow = frame.width / factor;
    let oh = frame.height / factor;
    let n = (factor * factor) as u32;
    let mut data = Vec::with_capacity(ow as usize * oh as usize * 3);
    for or in 0..oh {
        for oc in 0..ow {
            for ch in 0..3 {
                let mut sum: u32 = 0;
                for dr in 0..factor {
                    for dc in 0..factor {
                        let row = or * factor + dr;
                        let col = oc * factor + dc;
                        let i = (row as usize * frame.width as usize + col as usize) * 3;
                        sum += frame.data[i + ch] as u32;
                    }
                }
                data.push(((2 * sum + n) / (2 * n)) as u8);
            }
        }
    }
    Frame::new(ow, oh, data)
}

/// Integer nearest-neighbor upscaling.
pub fn upscale_nearest(frame: &Frame, factor: u32) -> Result<Frame, RenderError> {
    if factor == 0 {
        return Err(RenderError::BadFactor {
            factor,
            width: frame.width,
            height: frame.height,
        });
    }
    if factor == 1 {
        return Ok(frame.clone());
    }
    let ow = frame.width * factor;
    let oh = frame.height * factor;
    let mut data = Vec::with_capacity(ow as usize * oh as usize * 3);
    for row in 0..oh {
        for col in 0..ow {
            let src = frame.px(row / factor, col / factor);
            data.extend_from_slice(&src);
        }
    }
    Frame::new(ow, oh, data)
}

/// 50/50 blend of two equally sized frames, rounding half-up.
pub fn blend_half(a: &Frame, b: &Frame) -> Result<Frame, RenderError> {
    if a.dims() != b.dims() {
        return Err(RenderError::DimensionMismatch(
            a.width, a.height, b.width, b.height,
        ));
    }
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| ((x as u16 + y as u16 + 1) / 2) as u8)
        .collect();
    Frame::new(a.width, a.height, data)
}

/// Mean over all subpixel values, in `[0, 255]`.
pub fn mean_pixel_value(frame: &Frame) -> f64 {
    frame.data.iter().map(|&v| v as u64).sum::<u64>() as f64 / frame.data.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridPos;

    fn pos(x: u8, y: u8) -> GridPos {
        GridPos::new(x, y).unwrap()
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = RenderConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.frame_width(), 120);
        assert_eq!(cfg.frame_height(), 72);
    }

    #[test]
    fn render_is_deterministic() {
        let cfg = RenderConfig::default();
        for arm in [false, true] {
            let a = render(pos(7, 4), &cfg, arm);
            let b = render(pos(7, 4), &cfg, arm);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn disc_stays_within_affected_cells() {
        let cfg = RenderConfig::default();
        let a = render(pos(0, 0), &cfg, false);
        let b = render(pos(1, 0), &cfg, false);
        assert_ne!(a, b);
        for row in 0..a.height() {
            for col in 0..a.width() {
                if a.px(row, col) != b.px(row, col) {
                    // Both cells sit on the bottom grid row.
                    assert!(col < 2 * cfg.cell_px, "unexpected diff at col {col}");
                    assert!(row >= 8 * cfg.cell_px, "unexpected diff at row {row}");
                }
            }
        }
    }

    #[test]
    fn arm_overlay_darkens_frame() {
        let cfg = RenderConfig::default();
        let with_arm = mean_pixel_value(&render(pos(7, 4), &cfg, true));
        let without = mean_pixel_value(&render(pos(7, 4), &cfg, false));
        assert!(with_arm < without);
        // Frozen regression pair for the default config at (7, 4).
        assert_eq!(without, 228.17592592592592);
        assert_eq!(with_arm, 224.48958333333334);
    }

    #[test]
    fn arm_darkens_every_state() {
        let cfg = RenderConfig::default();
        for p in GridPos::all() {
            assert!(
                mean_pixel_value(&render(p, &cfg, true))
                    < mean_pixel_value(&render(p, &cfg, false)),
                "arm did not darken frame at {p}"
            );
        }
    }

    #[test]
    fn mse_identity_and_extremes() {
        let cfg = RenderConfig::default();
        let f = render(pos(3, 3), &cfg, false);
        assert_eq!(frame_mse(&f, &f).unwrap(), 0.0);

        let black = Frame::filled(4, 4, [0, 0, 0]);
        let white = Frame::filled(4, 4, [255, 255, 255]);
        assert_eq!(frame_mse(&black, &white).unwrap(), 1.0);
    }

    #[test]
    fn mse_rejects_dimension_mismatch() {
        let a = Frame::filled(4, 4, [0, 0, 0]);
        let b = Frame::filled(4, 8, [0, 0, 0]);
        assert!(matches!(
            frame_mse(&a, &b),
            Err(RenderError::DimensionMismatch(..))
        ));
    }

    #[test]
    fn states_render_distinctly() {
        let cfg = RenderConfig::default();
        let frames: Vec<Frame> = GridPos::all().map(|p| render(p, &cfg, false)).collect();
        for i in 0..frames.len() {
            for j in i + 1..frames.len() {
                assert!(frame_mse(&frames[i], &frames[j]).unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn downsample_identity_and_mean() {
        let f = Frame::new(
            2,
            2,
            vec![0, 0, 0, 0, 0, 0, 255, 255, 255, 255, 255, 255],
        )
        .unwrap();
        assert_eq!(downsample(&f, 1).unwrap(), f);
        let d = downsample(&f, 2).unwrap();
        assert_eq!(d.dims(), (1, 1));
        // (0 + 0 + 255 + 255) / 4 = 127.5, rounded half-up.
        assert_eq!(d.px(0, 0), [128, 128, 128]);
    }

    #[test]
    fn downsample_rejects_non_divisible_factor() {
        let f = Frame::filled(6, 4, [1, 2, 3]);
        assert!(matches!(
            downsample(&f, 4),
            Err(RenderError::BadFactor { .. })
        ));
    }

    #[test]
    fn downsample_is_deterministic() {
        let cfg = RenderConfig::default();
        let f = render(pos(9, 2), &cfg, false);
        assert_eq!(downsample(&f, 2).unwrap(), downsample(&f, 2).unwrap());
    }

    #[test]
    fn upscale_then_px_matches_source() {
        let f = Frame::new(2, 1, vec![10, 20, 30, 40, 50, 60]).unwrap();
        let u = upscale_nearest(&f, 3).unwrap();
        assert_eq!(u.dims(), (6, 3));
        assert_eq!(u.px(2, 1), [10, 20, 30]);
        assert_eq!(u.px(0, 5), [40, 50, 60]);
    }

    #[test]
    fn blend_rounds_half_up() {
        let a = Frame::filled(1, 1, [0, 10, 255]);
        let b = Frame::filled(1, 1, [1, 20, 255]);
        assert_eq!(blend_half(&a, &b).unwrap().px(0, 0), [1, 15, 255]);
    }
}
