//! Exact area overlap of rotated rectangles and the grasp success test.

use super::rect::{angle_diff, GraspRect};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Maximum orientation difference for a matching grasp (30°).
pub const SUCCESS_MAX_ANGLE: f64 = std::f64::consts::FRAC_PI_6;
/// IoU must be strictly above this for a match.
pub const SUCCESS_MIN_IOU: f64 = 0.25;

/// Shoelace area (absolute).
pub fn polygon_area<T: Scalar>(poly: &[[T; 2]]) -> T {
    if poly.len() < 3 {
        return T::zero();
    }
    let mut s = T::zero();
    for i in 0..poly.len() {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % poly.len()];
        s += x0 * y1 - x1 * y0;
    }
    (s / T::lit(2.0)).abs()
}

#[inline]
fn side<T: Scalar>(a: [T; 2], b: [T; 2], p: [T; 2]) -> T {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

fn intersect<T: Scalar>(s: [T; 2], e: [T; 2], a: [T; 2], b: [T; 2]) -> [T; 2] {
    let ds = side(a, b, s);
    let de = side(a, b, e);
    let t = ds / (ds - de);
    [s[0] + t * (e[0] - s[0]), s[1] + t * (e[1] - s[1])]
}

/// Sutherland–Hodgman: clips `subject` against the counter-clockwise convex `clip`.
pub fn clip_convex<T: Scalar>(subject: &[[T; 2]], clip: &[[T; 2]]) -> Vec<[T; 2]> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        let mut prev = *input.last().unwrap();
        for &cur in &input {
            let cur_in = side(a, b, cur) >= T::zero();
            let prev_in = side(a, b, prev) >= T::zero();
            if cur_in {
                if !prev_in {
                    output.push(intersect(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(intersect(prev, cur, a, b));
            }
            prev = cur;
        }
    }
    output
}

pub fn intersection_area<T: Scalar>(a: &GraspRect<T>, b: &GraspRect<T>) -> T {
    let clipped = clip_convex(&a.vertices(), &b.vertices());
    polygon_area(&clipped)
}

/// Intersection over union of two rotated rectangles, in `[0, 1]`.
pub fn rotated_iou<T: Scalar>(a: &GraspRect<T>, b: &GraspRect<T>) -> T {
    // Clip the smaller into the larger; the result is symmetric either way up to rounding.
    let inter = if a.area() <= b.area() {
        intersection_area(a, b)
    } else {
        intersection_area(b, a)
    };
    let union = a.area() + b.area() - inter;
    if union <= T::zero() {
        return T::zero();
    }
    (inter / union).max(T::zero()).min(T::one())
}

/// Whether `pred` matches some ground truth: orientation within 30° and IoU > 0.25.
pub fn is_success<T: Scalar>(pred: &GraspRect<T>, truths: &[GraspRect<T>]) -> Result<bool> {
    if truths.is_empty() {
        return Err(Error::Argument(
            "success test needs at least one ground-truth rectangle".into(),
        ));
    }
    let max_angle = T::lit(SUCCESS_MAX_ANGLE);
    let min_iou = T::lit(SUCCESS_MIN_IOU);
    Ok(truths
        .iter()
        .any(|t| angle_diff(pred.theta, t.theta) <= max_angle && rotated_iou(pred, t) > min_iou))
}
