use serde::{Deserialize, Serialize};

use crate::geometry::GraspRect;
use crate::scalar::Scalar;

/// Four per-stage `(θ̂, ŵ, ĥ)` triplets at one location with their mean and spread.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseOutput<T> {
    pub per_stage: [[T; 3]; 4],
    pub mean_pose: [T; 3],
    /// Sum over the three components of the population variance across stages.
    pub m_uc: T,
}

/// Sums four values in sorted order, so the result does not depend on stage order.
fn ordered_sum<T: Scalar>(mut v: [T; 4]) -> T {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    (v[0] + v[1]) + (v[2] + v[3])
}

impl<T: Scalar> PoseOutput<T> {
    pub fn from_stages(per_stage: [[T; 3]; 4]) -> Self {
        let quarter = T::lit(0.25);
        let mut mean_pose = [T::zero(); 3];
        let mut m_uc = T::zero();
        for c in 0..3 {
            let col = [
                per_stage[0][c],
                per_stage[1][c],
                per_stage[2][c],
                per_stage[3][c],
            ];
            let mean = ordered_sum(col) * quarter;
            mean_pose[c] = mean;
            m_uc += ordered_sum(col.map(|v| (v - mean) * (v - mean))) * quarter;
        }
        PoseOutput {
            per_stage,
            mean_pose,
            m_uc,
        }
    }

    /// Converts the normalised mean pose at `(x, y)` into a pixel-space rectangle.
    pub fn to_rect(&self, x: T, y: T, input_size: usize) -> GraspRect<T> {
        let [t, w, h] = denormalize_pose(self.mean_pose, input_size);
        let tiny = T::lit(1e-3);
        GraspRect {
            x,
            y,
            theta: t,
            w: w.max(tiny),
            h: h.max(tiny),
        }
        .normalized()
    }
}

/// `(θ, w, h)` in radians/pixels → `(θ/(π/2), w/size, h/size)`.
pub fn normalize_pose<T: Scalar>(rect: &GraspRect<T>, input_size: usize) -> [T; 3] {
    let s = T::lit(input_size as f64);
    [rect.theta / T::FRAC_PI_2(), rect.w / s, rect.h / s]
}

pub fn denormalize_pose<T: Scalar>(p: [T; 3], input_size: usize) -> [T; 3] {
    let s = T::lit(input_size as f64);
    [p[0] * T::FRAC_PI_2(), p[1] * s, p[2] * s]
}

/// One ranked grasp candidate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection<T> {
    pub rect: GraspRect<T>,
    pub location_score: T,
    pub m_uc: T,
    pub pose: PoseOutput<T>,
}
