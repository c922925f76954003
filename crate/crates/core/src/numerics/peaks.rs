//! Local-maximum detection with topographic prominence.

use serde::Serialize;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Peak {
    pub index: usize,
    /// Sub-grid location from a parabola through the three nearest points.
    pub position: f64,
    pub value: f64,
    pub prominence: f64,
}

fn parabola_vertex(x: [f64; 3], y: [f64; 3]) -> Option<f64> {
    let d1 = (y[1] - y[0]) / (x[1] - x[0]);
    let d2 = (y[2] - y[1]) / (x[2] - x[1]);
    let curv = (d2 - d1) / (x[2] - x[0]);
    if !(curv < 0.0) {
        return None;
    }
    // y' = d1 + curv (2x - x0 - x1) = 0
    let v = 0.5 * (x[0] + x[1] - d1 / curv);
    (v >= x[0] && v <= x[2]).then_some(v)
}

/// Local maxima of `values` sampled on the increasing `grid` whose
/// prominence is at least `min_prominence`, ordered by position.
///
/// Plateaus report their left-most sample. End points are never peaks.
pub fn find_peaks(values: &[f64], grid: &[f64], min_prominence: f64) -> Result<Vec<Peak>> {
    if values.len() != grid.len() {
        return Err(invalid("grid", "values and grid lengths differ"));
    }
    if values.iter().chain(grid).any(|v| !v.is_finite()) {
        return Err(invalid("values", "non-finite entries"));
    }
    let n = values.len();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if values[i] > values[i - 1] {
            let mut j = i;
            while j + 1 < n && values[j + 1] == values[i] {
                j += 1;
            }
            if j + 1 < n && values[j + 1] < values[i] {
                let v = values[i];
                let mut left_min = v;
                for k in (0..i).rev() {
                    if values[k] > v {
                        break;
                    }
                    left_min = left_min.min(values[k]);
                }
                let mut right_min = v;
                for &w in &values[j + 1..] {
                    if w > v {
                        break;
                    }
                    right_min = right_min.min(w);
                }
                let prominence = v - left_min.max(right_min);
                if prominence >= min_prominence {
                    let position = if j == i {
                        parabola_vertex(
                            [grid[i - 1], grid[i], grid[i + 1]],
                            [values[i - 1], values[i], values[i + 1]],
                        )
                        .unwrap_or(grid[i])
                    } else {
                        grid[i]
                    };
                    out.push(Peak { index: i, position, value: v, prominence });
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    Ok(out)
}
