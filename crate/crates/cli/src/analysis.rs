//! Peak picking on sampled curves.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub index: usize,
    pub position: f64,
    /// Height relative to the global maximum.
    pub relative_height: f64,
}

/// Strict local maxima (plateaus count once, at their first sample) whose
/// height is at least `min_relative` of the global maximum.
pub fn find_peaks(x: &[f64], y: &[f64], min_relative: f64) -> Vec<Peak> {
    let n = y.len().min(x.len());
    let max = y[..n].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if n < 3 || max <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if y[i] > y[i - 1] {
            let mut j = i;
            while j + 1 < n && y[j + 1] == y[i] {
                j += 1;
            }
            if j + 1 < n && y[j + 1] < y[i] && y[i] >= min_relative * max {
                out.push(Peak {
                    index: i,
                    position: x[i],
                    relative_height: y[i] / max,
                });
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Full width at half maximum of the peak at `index`, with linear
/// interpolation of the half-height crossings. None if a side never drops
/// below half height.
pub fn fwhm_at(x: &[f64], y: &[f64], index: usize) -> Option<f64> {
    let half = 0.5 * y[index];
    let cross = |a: usize, b: usize| x[a] + (half - y[a]) / (y[b] - y[a]) * (x[b] - x[a]);
    let mut l = index;
    while l > 0 && y[l - 1] > half {
        l -= 1;
    }
    let mut r = index;
    while r + 1 < y.len() && y[r + 1] > half {
        r += 1;
    }
    if l == 0 || r + 1 == y.len() {
        return None;
    }
    Some((cross(r, r + 1) - cross(l - 1, l)).abs())
}

/// The highest local maximum within `window` of `target`.
pub fn peak_near(x: &[f64], y: &[f64], target: f64, window: f64) -> Option<usize> {
    (1..y.len().saturating_sub(1))
        .filter(|&i| (x[i] - target).abs() <= window && y[i] >= y[i - 1] && y[i] >= y[i + 1])
        .max_by(|&a, &b| y[a].total_cmp(&y[b]))
}
