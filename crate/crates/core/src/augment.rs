//! Geometric augmentations with NaN fill and nearest-neighbor resampling.

use std::sync::Arc;

use rand::Rng;

use crate::raster::Raster;
use crate::store::{GridStack, Sample};

pub const MAX_ANGLE_DEG: f64 = 30.0;
pub const MAX_SHIFT_FRAC: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentSpec {
    /// Horizontal mirror (columns reversed).
    pub flip: bool,
    /// Counter-clockwise rotation about the raster center, degrees.
    pub angle_deg: f64,
    /// `(dy, dx)` as fractions of rows and cols.
    pub shift_frac: (f64, f64),
}

impl AugmentSpec {
    pub fn identity() -> Self {
        Self {
            flip: false,
            angle_deg: 0.0,
            shift_frac: (0.0, 0.0),
        }
    }
}

pub fn draw_spec(rng: &mut impl Rng) -> AugmentSpec {
    AugmentSpec {
        flip: rng.random_bool(0.5),
        angle_deg: rng.random_range(-MAX_ANGLE_DEG..=MAX_ANGLE_DEG),
        shift_frac: (
            rng.random_range(-MAX_SHIFT_FRAC..=MAX_SHIFT_FRAC),
            rng.random_range(-MAX_SHIFT_FRAC..=MAX_SHIFT_FRAC),
        ),
    }
}

/// Whole-cell translation, rounded half away from zero.
pub fn shift_cells(spec: &AugmentSpec, rows: usize, cols: usize) -> (i64, i64) {
    (
        (spec.shift_frac.0 * rows as f64).round() as i64,
        (spec.shift_frac.1 * cols as f64).round() as i64,
    )
}

/// For every output cell, the source cell it copies (`None` = NaN fill).
///
/// Forward order is flip, rotate, translate; the map applies the inverses
/// in reverse.
pub fn source_map(spec: &AugmentSpec, rows: usize, cols: usize) -> Vec<Option<usize>> {
    let (dy, dx) = shift_cells(spec, rows, cols);
    let (sin, cos) = spec.angle_deg.to_radians().sin_cos();
    let (cr, cc) = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows as i64 {
        for c in 0..cols as i64 {
            let (tr, tc) = (r - dy, c - dx);
            if tr < 0 || tc < 0 || tr >= rows as i64 || tc >= cols as i64 {
                out.push(None);
                continue;
            }
            let (fr, fc) = if spec.angle_deg == 0.0 {
                (tr, tc)
            } else {
                // Display coordinates: x right, y up.
                let (x, y) = (tc as f64 - cc, cr - tr as f64);
                let (sx, sy) = (cos * x + sin * y, -sin * x + cos * y);
                ((cr - sy).round() as i64, (sx + cc).round() as i64)
            };
            if fr < 0 || fc < 0 || fr >= rows as i64 || fc >= cols as i64 {
                out.push(None);
                continue;
            }
            let sc = if spec.flip { cols as i64 - 1 - fc } else { fc };
            out.push(Some(fr as usize * cols + sc as usize));
        }
    }
    out
}

pub fn resample(map: &[Option<usize>], src: &[f32]) -> Vec<f32> {
    map.iter().map(|m| m.map_or(f32::NAN, |i| src[i])).collect()
}

pub fn transform_raster(spec: &AugmentSpec, r: &Raster) -> Raster {
    let map = source_map(spec, r.rows, r.cols);
    Raster {
        rows: r.rows,
        cols: r.cols,
        data: resample(&map, &r.data),
    }
}

fn transform_stack(map: &[Option<usize>], s: &GridStack) -> GridStack {
    let mut out = s.clone();
    let n = s.plane_len();
    for c in 0..s.channels.len() {
        let plane = resample(map, s.plane(c));
        out.data[c * n..(c + 1) * n].copy_from_slice(&plane);
    }
    out
}

/// Applies one spec to every past, auxiliary and target raster and
/// recomputes the active mask.
pub fn apply_augment(spec: &AugmentSpec, sample: &Sample) -> Sample {
    let (rows, cols) = sample.extent();
    let map = source_map(spec, rows, cols);
    let mut out = Sample {
        base_date: sample.base_date,
        past: sample.past.iter().map(|s| Arc::new(transform_stack(&map, s))).collect(),
        future_aux: sample.future_aux.iter().map(|s| transform_stack(&map, s)).collect(),
        target: sample
            .target
            .iter()
            .map(|t| Raster {
                rows,
                cols,
                data: resample(&map, &t.data),
            })
            .collect(),
        active_mask: Vec::new(),
    };
    out.recompute_mask();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(rows: usize, cols: usize) -> Raster {
        Raster::new(rows, cols, (0..rows * cols).map(|i| i as f32).collect()).unwrap()
    }

    #[test]
    fn identity_spec_is_identity() {
        let r = ramp(5, 7);
        assert_eq!(transform_raster(&AugmentSpec::identity(), &r), r);
    }

    #[test]
    fn flip_is_involution() {
        let r = ramp(4, 5);
        let s = AugmentSpec { flip: true, ..AugmentSpec::identity() };
        let once = transform_raster(&s, &r);
        assert_eq!(once.get(0, 0), 4.0);
        assert_eq!(transform_raster(&s, &once), r);
    }

    #[test]
    fn shift_right_fills_left_columns() {
        let r = ramp(3, 100);
        let s = AugmentSpec { shift_frac: (0.0, 0.1), ..AugmentSpec::identity() };
        let t = transform_raster(&s, &r);
        for i in 0..3 {
            for j in 0..10 {
                assert!(t.get(i, j).is_nan());
            }
            for j in 10..100 {
                assert_eq!(t.get(i, j), r.get(i, j - 10));
            }
        }
    }

    #[test]
    fn shift_rounds_half_away_from_zero() {
        let s = AugmentSpec { shift_frac: (0.05, -0.05), ..AugmentSpec::identity() };
        assert_eq!(shift_cells(&s, 10, 10), (1, -1));
    }

    #[test]
    fn quarter_turn_on_square() {
        let r = ramp(3, 3);
        let s = AugmentSpec { angle_deg: 90.0, ..AugmentSpec::identity() };
        let t = transform_raster(&s, &r);
        // Counter-clockwise: the top-right corner moves to the top-left.
        assert_eq!(t.get(0, 0), r.get(0, 2));
        assert_eq!(t.get(1, 1), r.get(1, 1));
        assert_eq!(t.get(2, 0), r.get(0, 0));
    }

    #[test]
    fn draws_are_reproducible_and_in_range() {
        let a = draw_spec(&mut ChaCha8Rng::seed_from_u64(3));
        let b = draw_spec(&mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut flips = 0;
        for _ in 0..10_000 {
            let s = draw_spec(&mut rng);
            flips += s.flip as usize;
            assert!(s.angle_deg.abs() <= 30.0);
            assert!(s.shift_frac.0.abs() <= 0.1 && s.shift_frac.1.abs() <= 0.1);
        }
        assert!((flips as f64 / 1e4 - 0.5).abs() < 0.03, "{flips}");
    }
}
