//! Training targets: time-ramped confidence weights and Gaussian-smoothed
//! placement labels.

use serde::{Deserialize, Serialize};

use crate::grid::{GridError, GridSpec, Heatmap};

/// Exponent constant of the confidence ramp.
pub const CONFIDENCE_STEEPNESS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelParams {
    /// Gaussian standard deviation along x, in grid units.
    pub s_x: f64,
    /// Gaussian standard deviation along y, in grid units.
    pub s_y: f64,
    pub steepness: f64,
}

impl Default for LabelParams {
    fn default() -> Self {
        Self {
            s_x: 1.0,
            s_y: 1.0,
            steepness: CONFIDENCE_STEEPNESS,
        }
    }
}

/// `c_t = 1 - exp(-5 t / T)`.
pub fn confidence_weight(t: usize, len: usize) -> f64 {
    confidence_weight_with(t, len, CONFIDENCE_STEEPNESS)
}

pub fn confidence_weight_with(t: usize, len: usize, steepness: f64) -> f64 {
    debug_assert!(len >= 1);
    1.0 - (-steepness * t as f64 / len as f64).exp()
}

/// Label heatmap for a target at grid coordinates `(mx, my)` (real valued),
/// normalized to a peak of 1 and scaled by the confidence weight of step `t`
/// in a trajectory of `len` steps.
pub fn make_label(
    target: (f64, f64),
    grid: &GridSpec,
    params: &LabelParams,
    t: usize,
    len: usize,
) -> Result<Heatmap, GridError> {
    let (mx, my) = target;
    let in_range = |v: f64, hi: usize| v.is_finite() && v >= 0.0 && v <= (hi - 1) as f64;
    if !in_range(mx, grid.n) || !in_range(my, grid.m) {
        return Err(GridError::CellOutOfGrid {
            x: mx.floor() as i64,
            y: my.floor() as i64,
            n: grid.n,
            m: grid.m,
        });
    }
    let c = confidence_weight_with(t, len, params.steepness);
    let norm = 1.0 / (2.0 * std::f64::consts::PI * params.s_x * params.s_y);
    let mut values = Vec::with_capacity(grid.cells());
    for x in 0..grid.n {
        for y in 0..grid.m {
            let dx = x as f64 - mx;
            let dy = y as f64 - my;
            let e = -(dx * dx) / (2.0 * params.s_x * params.s_x)
                - (dy * dy) / (2.0 * params.s_y * params.s_y);
            values.push(norm * e.exp());
        }
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for v in &mut values {
        *v = *v / max * c;
    }
    Heatmap::from_vec(*grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Cell;

    const E5: f64 = 0.993_262_053_000_914_7; // 1 - e^-5

    #[test]
    fn confidence_endpoints() {
        assert_eq!(confidence_weight(0, 17), 0.0);
        assert_eq!(confidence_weight(40, 40), 1.0 - (-5.0f64).exp());
        assert!((confidence_weight(40, 40) - E5).abs() < 1e-15);
        assert!((confidence_weight(20, 40) - 0.917_915_001_376_101_3).abs() < 1e-12);
    }

    #[test]
    fn label_at_start_is_zero() {
        let g = GridSpec::default();
        let l = make_label((2.0, 7.0), &g, &LabelParams::default(), 0, 30).unwrap();
        assert!(l.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn label_peak_and_neighbours() {
        let g = GridSpec::default();
        let l = make_label((2.0, 7.0), &g, &LabelParams::default(), 30, 30).unwrap();
        assert_eq!(l.argmax(), Cell::new(2, 7));
        assert!((l.get(Cell::new(2, 7)) - E5).abs() < 1e-12);
        let want = E5 * (-0.5f64).exp();
        assert!((want - 0.602_444).abs() < 1e-6);
        for c in [
            Cell::new(1, 7),
            Cell::new(3, 7),
            Cell::new(2, 6),
            Cell::new(2, 8),
        ] {
            assert!((l.get(c) - want).abs() < 1e-12, "{c}");
        }
        assert_eq!(l.get(Cell::new(0, 5)), l.get(Cell::new(4, 9)));
    }

    #[test]
    fn label_rejects_out_of_grid() {
        let g = GridSpec::default();
        assert!(make_label((5.0, 0.0), &g, &LabelParams::default(), 1, 2).is_err());
        assert!(make_label((0.0, -0.1), &g, &LabelParams::default(), 1, 2).is_err());
    }
}
