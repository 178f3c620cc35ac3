use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Max distance (px) between the 4th vertex and the parallelogram closure of the other three.
pub const PARALLELOGRAM_TOL: f64 = 1.5;

/// Planar parallel-jaw grasp: centre `(x, y)`, orientation `theta` of the first
/// edge, extent `w` along `theta` and `h` across it.
///
/// `theta` is kept in `[-π/2, π/2)`; a grasp and its half-turn are the same grasp.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspRect<T> {
    pub x: T,
    pub y: T,
    pub theta: T,
    pub w: T,
    pub h: T,
}

/// Wraps an angle into `[-π/2, π/2)`.
pub fn normalize_angle<T: Scalar>(theta: T) -> T {
    let pi = T::PI();
    let half = T::FRAC_PI_2();
    let mut t = theta - pi * ((theta + half) / pi).floor();
    // Rounding in the subtraction can land exactly on the open end.
    if t >= half {
        t -= pi;
    }
    if t < -half {
        t += pi;
    }
    t
}

/// Smallest difference between two orientations modulo π, in `[0, π/2]`.
pub fn angle_diff<T: Scalar>(a: T, b: T) -> T {
    let pi = T::PI();
    let d = (a - b) % pi;
    let d = if d < T::zero() { d + pi } else { d };
    d.min(pi - d).max(T::zero())
}

impl<T: Scalar> GraspRect<T> {
    pub fn new(x: T, y: T, theta: T, w: T, h: T) -> Result<Self> {
        if !(w > T::zero() && h > T::zero()) || !(x.is_finite() && y.is_finite()) {
            return Err(Error::Geometry(format!(
                "rectangle needs finite centre and positive size, got ({x}, {y}, {theta}, {w}, {h})"
            )));
        }
        if !theta.is_finite() || !w.is_finite() || !h.is_finite() {
            return Err(Error::Geometry("non-finite rectangle parameter".into()));
        }
        Ok(GraspRect {
            x,
            y,
            theta: normalize_angle(theta),
            w,
            h,
        })
    }

    /// Same grasp with `theta` wrapped into its canonical range.
    pub fn normalized(self) -> Self {
        GraspRect {
            theta: normalize_angle(self.theta),
            ..self
        }
    }

    pub fn area(&self) -> T {
        self.w * self.h
    }

    /// Corners in edge order; the first edge runs along `theta` with length `w`.
    /// Counter-clockwise in a right-handed frame.
    pub fn vertices(&self) -> [[T; 2]; 4] {
        let two = T::lit(2.0);
        let (s, c) = self.theta.sin_cos();
        let (ux, uy) = (c * self.w / two, s * self.w / two);
        let (vx, vy) = (-s * self.h / two, c * self.h / two);
        [
            [self.x - ux - vx, self.y - uy - vy],
            [self.x + ux - vx, self.y + uy - vy],
            [self.x + ux + vx, self.y + uy + vy],
            [self.x - ux + vx, self.y - uy + vy],
        ]
    }

    /// Recovers a rectangle from four corners given in edge order.
    pub fn from_vertices(v: &[[T; 2]; 4]) -> Result<Self> {
        if v.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Geometry("non-finite vertex".into()));
        }
        let e1 = [v[1][0] - v[0][0], v[1][1] - v[0][1]];
        let e2 = [v[2][0] - v[1][0], v[2][1] - v[1][1]];
        let cross = e1[0] * e2[1] - e1[1] * e2[0];
        let w = e1[0].hypot(e1[1]);
        let h = e2[0].hypot(e2[1]);
        if w <= T::zero() || h <= T::zero() || cross.abs() <= T::lit(1e-9) * (w * h).max(T::one()) {
            return Err(Error::Geometry(format!("degenerate vertex set {v:?}")));
        }
        let closure = [v[0][0] + e2[0] - v[3][0], v[0][1] + e2[1] - v[3][1]];
        let gap = closure[0].hypot(closure[1]);
        if gap > T::lit(PARALLELOGRAM_TOL) {
            return Err(Error::Geometry(format!(
                "vertices are not a parallelogram (4th vertex off by {gap} px)"
            )));
        }
        let four = T::lit(4.0);
        let x = (v[0][0] + v[1][0] + v[2][0] + v[3][0]) / four;
        let y = (v[0][1] + v[1][1] + v[2][1] + v[3][1]) / four;
        GraspRect::new(x, y, e1[1].atan2(e1[0]), w, h)
    }

    /// Rigid motion: rotate by `angle` about the origin, then translate.
    pub fn transformed(&self, angle: T, dx: T, dy: T) -> Self {
        let (s, c) = angle.sin_cos();
        GraspRect {
            x: c * self.x - s * self.y + dx,
            y: s * self.x + c * self.y + dy,
            theta: normalize_angle(self.theta + angle),
            w: self.w,
            h: self.h,
        }
    }

    pub fn cast<U: Scalar>(&self) -> GraspRect<U> {
        GraspRect {
            x: U::lit(self.x.as_f64()),
            y: U::lit(self.y.as_f64()),
            theta: U::lit(self.theta.as_f64()),
            w: U::lit(self.w.as_f64()),
            h: U::lit(self.h.as_f64()),
        }
    }
}
