//! Pixel-space object localization, the perception half of the analytic
//! predictors.

use crate::grid::{GridPos, GRID_H, GRID_W};
use crate::render::{Frame, RenderConfig};

use super::PredictError;

/// Maximum Euclidean RGB distance from the configured object color for a
/// pixel to count as part of the object. The default arm color sits just
/// outside this ball, so occluder pixels never vote.
pub const OBJECT_COLOR_TOL: f64 = 60.0;

/// Find the cell whose center is nearest the centroid of object-colored
/// pixels. Works with or without the arm occluder; fails on frames with
/// no object pixels at all.
pub fn localize_object(frame: &Frame, cfg: &RenderConfig) -> Result<GridPos, PredictError> {
    let tol2 = (OBJECT_COLOR_TOL * OBJECT_COLOR_TOL) as i64;
    let [or, og, ob] = cfg.object_color.map(|v| v as i64);

    let mut count: u64 = 0;
    // Sum of doubled pixel-center coordinates, so everything stays integer.
    let mut sum_r2: u64 = 0;
    let mut sum_c2: u64 = 0;
    for row in 0..frame.height() {
        for col in 0..frame.width() {
            let [r, g, b] = frame.px(row, col).map(|v| v as i64);
            let d2 = (r - or).pow(2) + (g - og).pow(2) + (b - ob).pow(2);
            if d2 <= tol2 {
                count += 1;
                sum_r2 += 2 * row as u64 + 1;
                sum_c2 += 2 * col as u64 + 1;
            }
        }
    }
    if count == 0 {
        return Err(PredictError::ObjectNotFound);
    }
    let centroid_r = sum_r2 as f64 / (2 * count) as f64;
    let centroid_c = sum_c2 as f64 / (2 * count) as f64;

    let cell = cfg.cell_px as f64;
    let mut best: Option<(f64, u8, u8)> = None;
    for y in 0..GRID_H {
        for x in 0..GRID_W {
            let center_r = (GRID_H - 1 - y) as f64 * cell + cell / 2.0;
            let center_c = x as f64 * cell + cell / 2.0;
            let d = (center_r - centroid_r).powi(2) + (center_c - centroid_c).powi(2);
            let key = (d, y, x);
            if best.map_or(true, |b| key < b) {
                best = Some(key);
            }
        }
    }
    let (_, y, x) = best.expect("grid is non-empty");
    Ok(GridPos::new(x, y).expect("cell indices are in range"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{render, Frame};

    #[test]
    fn round_trips_all_states_without_arm() {
        let cfg = RenderConfig::default();
        for p in GridPos::all() {
            assert_eq!(localize_object(&render(p, &cfg, false), &cfg).unwrap(), p);
        }
    }

    #[test]
    fn round_trips_all_states_with_arm() {
        let cfg = RenderConfig::default();
        for p in GridPos::all() {
            assert_eq!(localize_object(&render(p, &cfg, true), &cfg).unwrap(), p);
        }
    }

    #[test]
    fn blank_frame_has_no_object() {
        let cfg = RenderConfig::default();
        let blank = Frame::filled(cfg.frame_width(), cfg.frame_height(), cfg.background);
        assert!(matches!(
            localize_object(&blank, &cfg),
            Err(PredictError::ObjectNotFound)
        ));
    }
}
