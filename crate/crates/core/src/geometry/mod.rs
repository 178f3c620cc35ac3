//! Rotated-rectangle grasp algebra, success criterion, heatmap targets and peaks.

mod heatmap;
mod iou;
mod rect;
pub mod rectfile;

pub use heatmap::{heatmap_target, nms_peaks, Heatmap, Peak};
pub use iou::{
    clip_convex, intersection_area, is_success, polygon_area, rotated_iou, SUCCESS_MAX_ANGLE,
    SUCCESS_MIN_IOU,
};
pub use rect::{angle_diff, normalize_angle, GraspRect, PARALLELOGRAM_TOL};
