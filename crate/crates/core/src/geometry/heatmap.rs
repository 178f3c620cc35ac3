use serde::{Deserialize, Serialize};

use super::rect::GraspRect;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-cell grasp-location feasibility in `[0, 1]`; one cell covers `stride × stride` input pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap<T> {
    grid: Tensor<T>,
    stride: usize,
}

/// A local maximum of a heatmap, in input-image pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak<T> {
    pub x: T,
    pub y: T,
    pub score: T,
}

impl<T: Scalar> Heatmap<T> {
    /// Wraps an `H×W` (or `1×H×W`) grid of values in `[0, 1]`.
    pub fn new(grid: Tensor<T>, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Argument("heatmap stride must be ≥ 1".into()));
        }
        let grid = match grid.shape() {
            [_, _] => grid,
            [1, h, w] => {
                let (h, w) = (*h, *w);
                grid.reshape(&[h, w])?
            }
            s => {
                return Err(Error::Dimension(format!(
                    "heatmap grid must be H×W, got {s:?}"
                )))
            }
        };
        if grid
            .data()
            .iter()
            .any(|&v| !(v >= T::zero() && v <= T::one()))
        {
            return Err(Error::Argument("heatmap values must lie in [0, 1]".into()));
        }
        Ok(Heatmap { grid, stride })
    }

    pub fn height(&self) -> usize {
        self.grid.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.grid.shape()[1]
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn grid(&self) -> &Tensor<T> {
        &self.grid
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.grid.data()[row * self.width() + col]
    }

    /// Input-image coordinates of a cell centre.
    pub fn cell_center(&self, row: usize, col: usize) -> (T, T) {
        let s = T::lit(self.stride as f64);
        let half = T::lit(0.5);
        (
            (T::lit(col as f64) + half) * s,
            (T::lit(row as f64) + half) * s,
        )
    }

    pub fn count_positive(&self) -> usize {
        self.grid.data().iter().filter(|&&v| v > T::zero()).count()
    }

    /// Highest cell, ties broken by row-major order.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.grid.data().iter().enumerate() {
            if v > self.grid.data()[best] {
                best = i;
            }
        }
        (best / self.width(), best % self.width())
    }
}

/// Binary target: a cell is 1 when its centre lies within `radius` input pixels of
/// any annotation centre.
pub fn heatmap_target<T: Scalar>(
    annotations: &[GraspRect<T>],
    height: usize,
    width: usize,
    stride: usize,
    radius: T,
) -> Result<Heatmap<T>> {
    if !(radius > T::zero()) {
        return Err(Error::Argument(format!(
            "ball radius must be > 0, got {radius}"
        )));
    }
    let mut map = Heatmap::new(Tensor::zeros(&[height, width]), stride)?;
    let r2 = radius * radius;
    let s = T::lit(stride as f64);
    for a in annotations {
        // Only cells whose centre can fall inside the ball.
        let lo = |c: T| ((c - radius) / s - T::lit(0.5)).floor().max(T::zero());
        let hi = |c: T, n: usize| {
            ((c + radius) / s - T::lit(0.5))
                .ceil()
                .min(T::lit(n as f64 - 1.0))
        };
        let (r0, r1) = (lo(a.y), hi(a.y, height));
        let (c0, c1) = (lo(a.x), hi(a.x, width));
        if r1 < r0 || c1 < c0 {
            continue;
        }
        let (r0, r1) = (r0.as_f64() as usize, r1.as_f64() as usize);
        let (c0, c1) = (c0.as_f64() as usize, c1.as_f64() as usize);
        for row in r0..=r1 {
            for col in c0..=c1 {
                let (cx, cy) = map.cell_center(row, col);
                let d2 = (cx - a.x) * (cx - a.x) + (cy - a.y) * (cy - a.y);
                if d2 <= r2 {
                    map.grid.data_mut()[row * width + col] = T::one();
                }
            }
        }
    }
    Ok(map)
}

/// Strict local maxima of a `window × window` neighbourhood scoring at least
/// `threshold`, highest first, at most `max_peaks`.
pub fn nms_peaks<T: Scalar>(
    map: &Heatmap<T>,
    threshold: T,
    window: usize,
    max_peaks: usize,
) -> Result<Vec<Peak<T>>> {
    if !(threshold > T::zero() && threshold < T::one()) {
        return Err(Error::Argument(format!(
            "NMS threshold must be in (0, 1), got {threshold}"
        )));
    }
    if window.is_multiple_of(2) {
        return Err(Error::Argument(format!(
            "NMS window must be odd, got {window}"
        )));
    }
    let half = window / 2;
    let (h, w) = (map.height(), map.width());
    let mut found: Vec<(T, usize, usize)> = Vec::new();
    for row in 0..h {
        for col in 0..w {
            let v = map.get(row, col);
            if v < threshold {
                continue;
            }
            let mut strict = true;
            'scan: for rr in row.saturating_sub(half)..=(row + half).min(h - 1) {
                for cc in col.saturating_sub(half)..=(col + half).min(w - 1) {
                    if (rr, cc) != (row, col) && map.get(rr, cc) >= v {
                        strict = false;
                        break 'scan;
                    }
                }
            }
            if strict {
                found.push((v, row, col));
            }
        }
    }
    // Stable sort keeps row-major order among equal scores.
    found.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    found.truncate(max_peaks);
    Ok(found
        .into_iter()
        .map(|(score, row, col)| {
            let (x, y) = map.cell_center(row, col);
            Peak { x, y, score }
        })
        .collect())
}
